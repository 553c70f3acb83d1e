"""
Entrada e saída de dados do toolkit SChanger.

- Leitura de datasets de detecção de mudanças (root/split/{A,B,label})
  e de segmentação de instante único (root/split/{image,label});
- Geração determinística de pares bitemporais sintéticos;
- Serialização de checkpoints (manifesto + payload float32 little-endian
  com CRC por tensor, escrita atômica);
- Escrita de rasters de predição (máscara e composição TP/FP/FN).

Versão: 1.0
"""

from __future__ import annotations

import json
import logging
import math
import os
import tempfile
import zlib
from collections import OrderedDict
from dataclasses import dataclass, field
from functools import partial
from pathlib import Path
from typing import Any, Callable, Dict, Iterable, List, Optional, Sequence, Set, Tuple

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image

from cache_manager import CacheManager, cached
from errors import CheckpointError, ConfigError, DataError, DimensionError
from validators import validar_fracao, validar_probabilidade, validar_tamanho_entrada


logger = logging.getLogger('schanger.data_io')

FORMAT_VERSION = 1
CHECKPOINT_MAGIC = 'SCHANGER-CKPT'
IMAGE_MEAN = 0.5
IMAGE_STD = 0.5
LABEL_THRESHOLD = 128

# Paleta da composição: TP verde, TN preto, FP amarelo, FN vermelho
PALETTE = {
    'tp': (0, 255, 0),
    'tn': (0, 0, 0),
    'fp': (255, 255, 0),
    'fn': (255, 0, 0),
}


# ==================== TIPOS ====================

@dataclass
class SamplePair:
    """Par bitemporal: duas imagens RGB (3, H, W) em [0, 1] e a máscara (1, H, W) binária."""

    image_t1: torch.Tensor
    image_t2: torch.Tensor
    mask: torch.Tensor
    id: str
    extent_t1: Optional[torch.Tensor] = None
    extent_t2: Optional[torch.Tensor] = None
    meta: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        size = tuple(self.image_t1.shape[-2:])
        rasters = [('image_t2', self.image_t2), ('mask', self.mask)]
        rasters += [(n, t) for n, t in (('extent_t1', self.extent_t1), ('extent_t2', self.extent_t2)) if t is not None]
        for name, t in rasters:
            if tuple(t.shape[-2:]) != size:
                raise DimensionError(f'SamplePair[{self.id}]', size, tuple(t.shape[-2:]), name)
        if self.image_t1.shape != self.image_t2.shape:
            raise DimensionError(f'SamplePair[{self.id}]', tuple(self.image_t1.shape), tuple(self.image_t2.shape))
        if not bool(((self.mask == 0) | (self.mask == 1)).all()):
            raise DataError(f"Máscara não binária na amostra {self.id}")

    @property
    def size(self) -> Tuple[int, int]:
        return int(self.image_t1.shape[-2]), int(self.image_t1.shape[-1])


@dataclass
class SegSample:
    """Amostra de segmentação de instante único (pré-treino da SPNet)."""

    image: torch.Tensor
    mask: torch.Tensor
    id: str

    def __post_init__(self):
        if tuple(self.image.shape[-2:]) != tuple(self.mask.shape[-2:]):
            raise DimensionError(f'SegSample[{self.id}]', tuple(self.image.shape[-2:]), tuple(self.mask.shape[-2:]))
        if not bool(((self.mask == 0) | (self.mask == 1)).all()):
            raise DataError(f"Máscara não binária na amostra {self.id}")

    @property
    def size(self) -> Tuple[int, int]:
        return int(self.image.shape[-2]), int(self.image.shape[-1])


class Checkpoint:
    """
    Armazém ordenado de tensores nomeados com metadados.

    ``buffers`` marca as entradas que não são parâmetros treináveis
    (estatísticas correntes de BN).
    """

    def __init__(self, tensors: "OrderedDict[str, torch.Tensor]", metadata: Optional[Dict[str, Any]] = None,
                 buffers: Optional[Iterable[str]] = None):
        self.tensors: "OrderedDict[str, torch.Tensor]" = OrderedDict(tensors)
        self.metadata: Dict[str, Any] = dict(metadata or {})
        self.buffers: Set[str] = set(buffers or ())
        unknown = self.buffers - set(self.tensors)
        if unknown:
            raise CheckpointError(f"Buffers sem tensor correspondente: {sorted(unknown)}")

    @classmethod
    def from_module(cls, module: torch.nn.Module, metadata: Optional[Dict[str, Any]] = None,
                    copy: bool = True) -> "Checkpoint":
        """Captura o state_dict do módulo; ``copy=False`` compartilha a memória."""
        state = module.state_dict()
        buffer_names = {name for name, _ in module.named_buffers()}
        tensors = OrderedDict()
        for name, t in state.items():
            t = t.detach()
            tensors[name] = t.to(torch.float32).clone() if copy else t
        return cls(tensors, metadata, buffer_names & set(tensors))

    # Acesso tipo dicionário
    def __getitem__(self, name: str) -> torch.Tensor:
        return self.tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self.tensors

    def __len__(self) -> int:
        return len(self.tensors)

    def __iter__(self):
        return iter(self.tensors)

    def paths(self) -> List[str]:
        return list(self.tensors)

    def parameter_paths(self) -> List[str]:
        return [p for p in self.tensors if p not in self.buffers]

    def param_count(self) -> int:
        """Número de escalares das entradas treináveis."""
        return sum(self.tensors[p].numel() for p in self.parameter_paths())

    def scalar_count(self) -> int:
        return sum(t.numel() for t in self.tensors.values())

    def clone(self) -> "Checkpoint":
        return Checkpoint(OrderedDict((k, v.detach().clone()) for k, v in self.tensors.items()),
                          dict(self.metadata), set(self.buffers))

    def equals(self, other: "Checkpoint") -> bool:
        """Igualdade bit a bit de nomes, formas e valores."""
        if list(self.tensors) != list(other.tensors):
            return False
        return all(torch.equal(self.tensors[k], other.tensors[k]) for k in self.tensors)


# ==================== LEITURA DE RASTERS ====================

class PngReader:
    """Decodificador de PNG com cache das matrizes já lidas."""

    def __init__(self, cache: Optional[CacheManager] = None):
        self._cache_manager = cache

    @cached(timeout_seconds=3600, key_prefix='png')
    def read(self, path: str, mode: str) -> np.ndarray:
        try:
            with Image.open(path) as img:
                arr = np.asarray(img.convert(mode), dtype=np.uint8)
        except (OSError, ValueError) as e:
            raise DataError(f"Raster ilegível: {path} ({e})") from e
        arr.setflags(write=False)
        return arr


png_reader = PngReader(CacheManager(default_timeout=3600, max_entries=4096, max_bytes=512 * 2 ** 20))


def read_rgb(path) -> torch.Tensor:
    """Lê um PNG 8 bits como tensor (3, H, W) em [0, 1]."""
    arr = png_reader.read(str(path), 'RGB')
    return torch.from_numpy(arr.astype(np.float32) / 255.0).permute(2, 0, 1).contiguous()


def read_label(path) -> torch.Tensor:
    """Lê um rótulo 8 bits e binariza em 128; retorna (1, H, W) em {0, 1}."""
    arr = png_reader.read(str(path), 'L')
    return torch.from_numpy((arr >= LABEL_THRESHOLD).astype(np.float32)).unsqueeze(0)


def normalize_image(img: torch.Tensor, mean: float = IMAGE_MEAN, std: float = IMAGE_STD) -> torch.Tensor:
    """Normalização por canal independente do dataset."""
    return (img - mean) / std


def _list_pngs(folder: Path) -> List[str]:
    return sorted(p.name for p in folder.iterdir() if p.is_file() and p.suffix.lower() == '.png')


def _check_counterparts(split_dir: Path, subdirs: Sequence[str]) -> List[str]:
    for sub in subdirs:
        if not (split_dir / sub).is_dir():
            raise DataError(f"Diretório ausente: {split_dir / sub}")

    listings = {sub: _list_pngs(split_dir / sub) for sub in subdirs}
    names = listings[subdirs[0]]
    all_names = set().union(*listings.values())
    for name in sorted(all_names):
        for sub in subdirs:
            if name not in listings[sub]:
                raise DataError(f"Arquivo correspondente ausente para '{Path(name).stem}': {split_dir / sub / name}")
    return names


def load_cd_dataset(root, split: str, fraction: float = 1.0, seed: int = 0) -> List[SamplePair]:
    """
    Carrega um dataset de detecção de mudanças.

    Args:
        root: Raiz com root/split/{A,B,label}/*.png
        split: 'train', 'val' ou 'test'
        fraction: Fração do split (protocolo few-shot)
        seed: Semente da subamostragem

    Returns:
        Lista de SamplePair em ordem lexicográfica dos nomes

    Raises:
        DataError: arquivo correspondente ausente ou dimensões divergentes
    """
    split_dir = Path(root) / split
    names = _check_counterparts(split_dir, ('A', 'B', 'label'))

    pairs = [_read_pair(split_dir, name) for name in names]
    logger.info(f"Dataset CD carregado: {split_dir} ({len(pairs)} pares)")
    return fewshot_subset(pairs, fraction, seed) if fraction < 1.0 else pairs


def _read_pair(split_dir: Path, name: str) -> SamplePair:
    sid = Path(name).stem
    try:
        return SamplePair(read_rgb(split_dir / 'A' / name), read_rgb(split_dir / 'B' / name),
                          read_label(split_dir / 'label' / name), sid)
    except DimensionError as e:
        raise DataError(f"Dimensões divergentes na amostra '{sid}': {e}") from e


def lazy_cd_dataset(root, split: str) -> List[Tuple[str, Callable[[], SamplePair]]]:
    """
    Lista (id, carregador) para cada imagem em root/split/A.

    Nada é decodificado aqui; um par ilegível ou incompleto só falha
    (DataError) quando o carregador é chamado.
    """
    split_dir = Path(root) / split
    if not (split_dir / 'A').is_dir():
        raise DataError(f"Diretório ausente: {split_dir / 'A'}")
    return [(Path(name).stem, partial(_read_pair, split_dir, name)) for name in _list_pngs(split_dir / 'A')]


def load_seg_dataset(root, split: str) -> List[SegSample]:
    """Carrega um dataset de segmentação de instante único (root/split/{image,label})."""
    split_dir = Path(root) / split
    names = _check_counterparts(split_dir, ('image', 'label'))

    samples = []
    for name in names:
        sid = Path(name).stem
        try:
            samples.append(SegSample(read_rgb(split_dir / 'image' / name),
                                     read_label(split_dir / 'label' / name), sid))
        except DimensionError as e:
            raise DataError(f"Dimensões divergentes na amostra '{sid}': {e}") from e

    logger.info(f"Dataset de segmentação carregado: {split_dir} ({len(samples)} amostras)")
    return samples


def fewshot_subset(samples: Sequence, fraction: float, seed: int) -> List:
    """
    Subamostragem determinística da lista de treino.

    A ordem original é preservada; frações típicas: 5, 10, 20, 30 e 100%.
    """
    ok, msg = validar_fracao(fraction)
    if not ok:
        raise ConfigError(msg)
    n = len(samples)
    if fraction >= 1.0 or n == 0:
        return list(samples)
    k = max(1, int(round(fraction * n)))
    idx = np.sort(np.random.default_rng(seed).choice(n, size=k, replace=False))
    return [samples[i] for i in idx]


def segmentation_samples(pairs: Iterable[SamplePair]) -> List[SegSample]:
    """Converte pares sintéticos em amostras de segmentação (imagem, pegada dos prédios)."""
    samples = []
    for pair in pairs:
        if pair.extent_t1 is None or pair.extent_t2 is None:
            raise DataError(f"Par '{pair.id}' sem pegadas de construções")
        samples.append(SegSample(pair.image_t1, pair.extent_t1, f"{pair.id}_t1"))
        samples.append(SegSample(pair.image_t2, pair.extent_t2, f"{pair.id}_t2"))
    return samples


# ==================== DADOS SINTÉTICOS ====================

Rect = Tuple[int, int, int, int]  # (topo, esquerda, altura, largura)


def rasterize(rects: Iterable[Rect], size: int) -> np.ndarray:
    """Pegada (união) de um conjunto de retângulos."""
    m = np.zeros((size, size), dtype=bool)
    for top, left, h, w in rects:
        m[top:top + h, left:left + w] = True
    return m


def _overlaps(rect: Rect, placed: Sequence[Rect], gap: int = 1) -> bool:
    top, left, h, w = rect
    for t, l, hh, ww in placed:
        if top < t + hh + gap and t < top + h + gap and left < l + ww + gap and l < left + w + gap:
            return True
    return False


def _place(rng: np.random.Generator, size: int, h: int, w: int, placed: List[Rect],
           attempts: int = 50) -> Optional[Rect]:
    h, w = min(h, size), min(w, size)
    for _ in range(attempts):
        rect = (int(rng.integers(0, size - h + 1)), int(rng.integers(0, size - w + 1)), h, w)
        if not _overlaps(rect, placed):
            return rect
    return None


def _background(rng: np.random.Generator, size: int) -> np.ndarray:
    base = rng.uniform(0.3, 0.5, size=(3, 1, 1))
    coarse = torch.from_numpy(rng.normal(0.0, 0.06, size=(1, 3, 5, 5)).astype(np.float32))
    smooth = F.interpolate(coarse, size=(size, size), mode='bilinear', align_corners=False)[0].numpy()
    fine = rng.normal(0.0, 0.02, size=(3, size, size))
    return np.clip(base + smooth + fine, 0.15, 0.85)


def _paint(canvas: np.ndarray, rects: Iterable[Rect], colors: Dict[Rect, np.ndarray]) -> np.ndarray:
    out = canvas.copy()
    for rect in rects:
        top, left, h, w = rect
        out[:, top:top + h, left:left + w] = colors[rect][:, None, None]
    return out


def synth_generate(seed: int, n: int, size: int, change_density: float = 0.1) -> List[SamplePair]:
    """
    Gera pares bitemporais sintéticos.

    t1 é um fundo texturizado com retângulos ("construções") disjuntos; t2
    mantém parte deles, remove alguns e acrescenta outros, seguido de um
    ganho/deslocamento fotométrico global. A máscara é a diferença
    simétrica das pegadas de t1 e t2 e a área alterada busca
    ``change_density`` da imagem.

    Args:
        seed: Semente (saída totalmente determinística)
        n: Número de pares (>= 1)
        size: Lado da imagem (múltiplo de 16)
        change_density: Fração alvo de pixels alterados, em [0, 1)

    Returns:
        Lista de SamplePair com pegadas e retângulos em ``meta``
    """
    ok, msg = validar_tamanho_entrada(size, size)
    if not ok:
        raise ConfigError(msg)
    if not isinstance(n, int) or n < 1:
        raise ConfigError(f"n deve ser >= 1 (recebido {n})")
    ok, msg = validar_probabilidade(change_density, 'change_density')
    if not ok or change_density >= 1.0:
        raise ConfigError(msg or "change_density deve ser < 1")

    rng = np.random.default_rng(seed)
    min_side, max_side = max(2, size // 16), max(3, size // 4)
    pairs = []

    for idx in range(n):
        background = _background(rng, size)
        placed: List[Rect] = []

        # Construções que permanecem nos dois instantes
        stable: List[Rect] = []
        for _ in range(int(rng.integers(2, 6))):
            rect = _place(rng, size, int(rng.integers(min_side, max_side + 1)),
                          int(rng.integers(min_side, max_side + 1)), placed)
            if rect is not None:
                placed.append(rect)
                stable.append(rect)

        # Construções que aparecem ou desaparecem
        removed: List[Rect] = []
        added: List[Rect] = []
        target = change_density * size * size
        area = 0
        misses = 0
        while area < target and misses < 20:
            h = int(rng.integers(min_side, max_side + 1))
            w = int(rng.integers(min_side, max_side + 1))
            remaining = target - area
            if h * w > remaining:
                h = max(1, int(round(remaining / w)))
            rect = _place(rng, size, h, w, placed)
            if rect is None:
                misses += 1
                continue
            placed.append(rect)
            (removed if rng.random() < 0.5 else added).append(rect)
            area += rect[2] * rect[3]

        colors = {r: rng.uniform(0.6, 0.85, size=3) for r in placed}
        rects_t1 = stable + removed
        rects_t2 = stable + added
        img1 = _paint(background, rects_t1, colors)
        img2_raw = _paint(background, rects_t2, colors)

        gain = rng.uniform(0.9, 1.1)
        offset = rng.uniform(-0.05, 0.05)
        img2 = np.clip(gain * img2_raw + offset, 0.0, 1.0)

        f1 = rasterize(rects_t1, size)
        f2 = rasterize(rects_t2, size)
        mask = np.logical_xor(f1, f2)

        def _t(a: np.ndarray) -> torch.Tensor:
            return torch.from_numpy(np.ascontiguousarray(a, dtype=np.float32))

        pairs.append(SamplePair(
            _t(img1), _t(img2), _t(mask[None]), f"synth_{seed}_{idx:05d}",
            extent_t1=_t(f1[None]), extent_t2=_t(f2[None]),
            meta={'rects_t1': rects_t1, 'rects_t2': rects_t2, 'gain': gain, 'offset': offset},
        ))

    return pairs


def _to_uint8(img: torch.Tensor) -> np.ndarray:
    arr = img.detach().cpu().numpy()
    if arr.ndim == 3:
        arr = arr.transpose(1, 2, 0)
        if arr.shape[2] == 1:
            arr = arr[:, :, 0]
    return np.clip(np.rint(arr * 255.0), 0, 255).astype(np.uint8)


def write_cd_dataset(pairs: Iterable[SamplePair], root, split: str) -> int:
    """Materializa pares em root/split/{A,B,label}/<id>.png."""
    split_dir = Path(root) / split
    for sub in ('A', 'B', 'label'):
        (split_dir / sub).mkdir(parents=True, exist_ok=True)
    count = 0
    for pair in pairs:
        Image.fromarray(_to_uint8(pair.image_t1)).save(split_dir / 'A' / f"{pair.id}.png")
        Image.fromarray(_to_uint8(pair.image_t2)).save(split_dir / 'B' / f"{pair.id}.png")
        Image.fromarray(_to_uint8(pair.mask)).save(split_dir / 'label' / f"{pair.id}.png")
        count += 1
    return count


def write_seg_dataset(samples: Iterable[SegSample], root, split: str) -> int:
    """Materializa amostras em root/split/{image,label}/<id>.png."""
    split_dir = Path(root) / split
    for sub in ('image', 'label'):
        (split_dir / sub).mkdir(parents=True, exist_ok=True)
    count = 0
    for s in samples:
        Image.fromarray(_to_uint8(s.image)).save(split_dir / 'image' / f"{s.id}.png")
        Image.fromarray(_to_uint8(s.mask)).save(split_dir / 'label' / f"{s.id}.png")
        count += 1
    return count


# ==================== CHECKPOINTS ====================

def save_checkpoint(ckpt: Checkpoint, path) -> Path:
    """
    Grava o checkpoint: cabeçalho, manifesto JSON e payload float32 LE.

    A escrita vai para um arquivo temporário no mesmo diretório e é
    concluída com rename atômico.
    """
    path = Path(path)
    entries = []
    chunks = []
    offset = 0
    for name, t in ckpt.tensors.items():
        data = t.detach().cpu().to(torch.float32).contiguous().numpy().astype('<f4').tobytes()
        entries.append({
            'name': name,
            'dtype': 'float32',
            'shape': list(t.shape),
            'offset': offset,
            'nbytes': len(data),
            'crc32': zlib.crc32(data),
            'buffer': name in ckpt.buffers,
        })
        chunks.append(data)
        offset += len(data)

    manifest = json.dumps({'format_version': FORMAT_VERSION, 'metadata': ckpt.metadata,
                           'tensors': entries}, ensure_ascii=False, default=str).encode('utf-8')
    header = f"{CHECKPOINT_MAGIC} {FORMAT_VERSION} {len(manifest)}\n".encode('ascii')

    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=str(path.parent))
        try:
            with os.fdopen(fd, 'wb') as f:
                f.write(header)
                f.write(manifest)
                for chunk in chunks:
                    f.write(chunk)
                f.flush()
                os.fsync(f.fileno())
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
    except OSError as e:
        raise DataError(f"Falha ao gravar checkpoint em {path}: {e}") from e

    logger.info(f"Checkpoint gravado: {path} ({len(entries)} tensores, {offset} bytes)")
    return path


def load_checkpoint(path) -> Checkpoint:
    """
    Lê um checkpoint gravado por ``save_checkpoint``.

    Raises:
        CheckpointError: versão diferente, manifesto malformado, payload truncado ou CRC inválido
    """
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise CheckpointError(f"Checkpoint ilegível: {path} ({e})") from e

    newline = raw.find(b'\n')
    try:
        magic, version, manifest_len = raw[:newline].decode('ascii').split(' ')
        version, manifest_len = int(version), int(manifest_len)
    except (UnicodeDecodeError, ValueError) as e:
        raise CheckpointError(f"Cabeçalho de checkpoint inválido: {path}") from e
    if magic != CHECKPOINT_MAGIC:
        raise CheckpointError(f"Arquivo não é um checkpoint SChanger: {path}")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"Versão de formato {version} incompatível (esperada {FORMAT_VERSION})")

    start = newline + 1
    try:
        manifest = json.loads(raw[start:start + manifest_len].decode('utf-8'))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"Manifesto corrompido: {path}") from e

    payload = raw[start + manifest_len:]
    tensors = OrderedDict()
    buffers = set()
    try:
        entries = manifest['tensors']
        metadata = manifest.get('metadata', {})
        if not isinstance(entries, list) or not isinstance(metadata, dict):
            raise TypeError("campos 'tensors'/'metadata' com tipo inválido")
        for entry in entries:
            name = str(entry['name'])
            offset, nbytes = int(entry['offset']), int(entry['nbytes'])
            shape = [int(s) for s in entry['shape']]
            if offset < 0 or nbytes < 0 or any(s < 0 for s in shape):
                raise ValueError(f"tensor '{name}' com offset, tamanho ou forma negativos")
            if nbytes != 4 * math.prod(shape):
                raise ValueError(f"tensor '{name}': {nbytes} bytes não correspondem à forma {shape}")
            end = offset + nbytes
            if end > len(payload):
                raise CheckpointError(f"Payload truncado no tensor '{name}': {path}")
            data = payload[offset:end]
            if zlib.crc32(data) != entry['crc32']:
                raise CheckpointError(f"Falha de checksum no tensor '{name}': {path}")
            arr = np.frombuffer(data, dtype='<f4').astype(np.float32).reshape(shape)
            tensors[name] = torch.from_numpy(arr.copy())
            if entry.get('buffer'):
                buffers.add(name)
    except CheckpointError:
        raise
    except (KeyError, TypeError, ValueError, AttributeError) as e:
        raise CheckpointError(f"Manifesto inválido em {path}: {e}") from e

    return Checkpoint(tensors, metadata, buffers)


# ==================== PREDIÇÕES ====================

def composite_raster(pred: torch.Tensor, gt: torch.Tensor) -> np.ndarray:
    """Composição RGB uint8 com a paleta TP/TN/FP/FN."""
    p = torch.as_tensor(pred).squeeze().bool().cpu().numpy()
    g = torch.as_tensor(gt).squeeze().bool().cpu().numpy()
    if p.shape != g.shape:
        raise DimensionError('composite_raster', p.shape, g.shape)
    out = np.zeros(p.shape + (3,), dtype=np.uint8)
    out[p & g] = PALETTE['tp']
    out[p & ~g] = PALETTE['fp']
    out[~p & g] = PALETTE['fn']
    return out


def write_prediction(values, path, kind: str = 'mask', gt=None, threshold: float = 0.5) -> Path:
    """
    Grava um raster de predição.

    Args:
        values: Mapa de probabilidades ou máscara binária (H, W)
        path: Arquivo PNG de destino
        kind: 'mask' (8 bits, {0, 255}) ou 'composite' (RGB, exige ``gt``)
        gt: Máscara de referência para a composição
        threshold: Limiar aplicado a mapas de probabilidade
    """
    v = torch.as_tensor(values).detach().float().squeeze()
    if not bool(((v >= 0) & (v <= 1)).all()):
        raise DataError("Valores de predição fora de [0, 1]")
    pred = v >= threshold

    if kind == 'mask':
        img = Image.fromarray(pred.cpu().numpy().astype(np.uint8) * 255)
    elif kind == 'composite':
        if gt is None:
            raise ConfigError("Composição exige a máscara de referência")
        img = Image.fromarray(composite_raster(pred, gt))
    else:
        raise ConfigError(f"Tipo de predição desconhecido: {kind}")

    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        img.save(path)
    except OSError as e:
        raise DataError(f"Não foi possível gravar {path}: {e}") from e
    return path
