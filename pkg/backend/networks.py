"""
Montagem das redes SPNet (instante único) e SChanger (siamesa bitemporal).

Topologia comum:
    stem -> 5 estágios de codificador (2 LFEMs cada, max pooling antes dos
    estágios 2-5) -> bloco de atenção em cada estágio (VANM na SPNet, SCAM
    na SChanger) -> 5 estágios de decodificador (soma do mapa mais profundo
    reamostrado com o skip processado, seguida de 2 LFEMs) -> MSFSH.

O estágio s do decodificador consome C_s canais e emite C_{s-1}; a SChanger
acrescenta um TFM por estágio de decodificador (larguras C0..C4) que funde
os dois fluxos antes da cabeça.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import torch
from torch import nn

import tensor_ops as ops
from blocks import (FUSION_KINDS, LFEM, MSFSH, SCAM, VANM, Conv, DropPath, LfemConfig, Norm,
                    SclkaConfig, Stem, TemporalFusion)
from data_io import Checkpoint, FORMAT_VERSION
from errors import CheckpointError, ConfigError, DimensionError
from validators import validar_tamanho_entrada, validar_taxa_droppath, validar_variante


logger = logging.getLogger('schanger.networks')

DOWNSAMPLE_RATIOS = (1, 1, 2, 4, 8, 16)
VARIANT_CHANNELS = {
    'small': (8, 16, 32, 40, 48, 48),
    'base': (24, 32, 48, 64, 104, 120),
}
MODES = ('spnet', 'schanger')


@dataclass(frozen=True)
class VariantConfig:
    """Plano de canais C0..C5 e hiperparâmetros estruturais de uma variante."""

    name: str
    channels: Tuple[int, ...]
    downsample_ratios: Tuple[int, ...] = DOWNSAMPLE_RATIOS
    droppath_rate: float = 0.0
    expansion: int = 6
    se_ratio: float = 0.375
    ffn_ratio: int = 4
    fusion: str = 'tfm_ln'

    def __post_init__(self):
        if len(self.channels) != 6 or any((not isinstance(c, int)) or c <= 0 for c in self.channels):
            raise ConfigError(f"Plano de canais inválido: {self.channels}")
        if tuple(self.downsample_ratios) != DOWNSAMPLE_RATIOS:
            raise ConfigError(f"Razões de subamostragem devem ser {DOWNSAMPLE_RATIOS}")
        ok, msg = validar_taxa_droppath(self.droppath_rate, permitir_um=True)
        if not ok:
            raise ConfigError(msg)
        if self.fusion not in FUSION_KINDS:
            raise ConfigError(f"Estratégia de fusão inválida: {self.fusion}")
        if self.expansion < 1 or self.ffn_ratio < 1 or self.se_ratio <= 0:
            raise ConfigError("expansion, ffn_ratio e se_ratio devem ser positivos")

    @property
    def decoder_channels(self) -> Tuple[int, ...]:
        """Largura de saída dos estágios 1..5 do decodificador."""
        return tuple(self.channels[:5])

    def lfem(self, in_ch: int, out_ch: int) -> LfemConfig:
        return LfemConfig(in_ch, out_ch, self.expansion, self.se_ratio, self.droppath_rate)

    def to_metadata(self) -> Dict[str, object]:
        return {'variant': self.name, 'channels': list(self.channels), 'fusion': self.fusion,
                'se_ratio': self.se_ratio, 'ffn_ratio': self.ffn_ratio, 'expansion': self.expansion}


def get_variant(name: str, **overrides) -> VariantConfig:
    """Retorna a configuração tabelada de 'small' ou 'base'."""
    ok, msg = validar_variante(name)
    if not ok:
        raise ConfigError(msg)
    name = name.strip().lower()
    return VariantConfig(name, VARIANT_CHANNELS[name], **overrides)


# ==================== ESTÁGIOS ====================

class EncoderStage(nn.Module):
    def __init__(self, cfg: VariantConfig, in_ch: int, out_ch: int, pool: bool):
        super().__init__()
        self.pool = pool
        self.lfem1 = LFEM(cfg.lfem(in_ch, out_ch))
        self.lfem2 = LFEM(cfg.lfem(out_ch, out_ch))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if self.pool:
            x = ops.resample(x, 'maxpool2')
        return self.lfem2(self.lfem1(x))


class DecoderStage(nn.Module):
    def __init__(self, cfg: VariantConfig, in_ch: int, out_ch: int):
        super().__init__()
        self.lfem1 = LFEM(cfg.lfem(in_ch, out_ch))
        self.lfem2 = LFEM(cfg.lfem(out_ch, out_ch))

    def forward(self, x: torch.Tensor, deeper: Optional[torch.Tensor] = None) -> torch.Tensor:
        if deeper is not None:
            up = ops.resample(deeper, 'bilinear', tuple(x.shape[2:]))
            x = ops.elementwise(up, x, 'add')
        return self.lfem2(self.lfem1(x))


class SPNet(nn.Module):
    """Rede de segmentação de instante único."""

    mode = 'spnet'

    def __init__(self, cfg: VariantConfig):
        super().__init__()
        self.cfg = cfg
        c = cfg.channels
        self.stem = Stem(c[0])
        self.encoder = nn.ModuleDict({
            f"stage{s}": EncoderStage(cfg, c[s - 1], c[s], pool=s > 1) for s in range(1, 6)
        })
        self.attention = nn.ModuleDict({f"stage{s}": self._attention_block(c[s]) for s in range(1, 6)})
        self.decoder = nn.ModuleDict({
            f"stage{s}": DecoderStage(cfg, c[s], c[s - 1]) for s in range(1, 6)
        })
        self.head = MSFSH(cfg.decoder_channels)

    def _attention_block(self, channels: int) -> nn.Module:
        return VANM(channels, self.cfg.ffn_ratio, SclkaConfig(channels))

    def check_input(self, image: torch.Tensor, op: str) -> None:
        if image.dim() != 4 or image.shape[1] != 3:
            raise DimensionError(op, 'imagem (N, 3, H, W)', tuple(image.shape))
        ok, msg = validar_tamanho_entrada(int(image.shape[2]), int(image.shape[3]))
        if not ok:
            raise DimensionError(op, 'dimensões múltiplas de 16', tuple(image.shape[2:]), msg)

    def encode(self, image: torch.Tensor) -> List[torch.Tensor]:
        """Características dos estágios 1..5 do codificador."""
        x = self.stem(image)
        feats = []
        for s in range(1, 6):
            x = self.encoder[f"stage{s}"](x)
            feats.append(x)
        return feats

    def decode(self, skips: Sequence[torch.Tensor]) -> List[torch.Tensor]:
        """Decodifica skips já processados; retorna D1..D5 (resolução decrescente)."""
        d = self.decoder['stage5'](skips[4])
        outs = [d]
        for s in range(4, 0, -1):
            d = self.decoder[f"stage{s}"](skips[s - 1], d)
            outs.append(d)
        return outs[::-1]

    def forward(self, image: torch.Tensor) -> List[torch.Tensor]:
        self.check_input(image, 'spnet_forward')
        feats = self.encode(image)
        skips = [self.attention[f"stage{s}"](f) for s, f in enumerate(feats, start=1)]
        return self.head(self.decode(skips), tuple(image.shape[2:]))


class SChanger(SPNet):
    """
    Rede siamesa bitemporal.

    Os dois instantes passam pelas mesmas camadas como um único lote
    concatenado (pesos e estatísticas de BN compartilhados); os SCAMs
    substituem os VANMs e os TFMs de ``fusion`` fundem cada estágio do
    decodificador.
    """

    mode = 'schanger'

    def __init__(self, cfg: VariantConfig):
        super().__init__(cfg)
        self.fusion = nn.ModuleDict({
            f"stage{s}": TemporalFusion(w, cfg.fusion) for s, w in enumerate(cfg.decoder_channels, start=1)
        })

    def _attention_block(self, channels: int) -> nn.Module:
        return SCAM(channels, self.cfg.ffn_ratio, SclkaConfig(channels), self.cfg.fusion)

    def stream_features(self, img1: torch.Tensor,
                        img2: torch.Tensor) -> List[Tuple[torch.Tensor, torch.Tensor]]:
        """Saídas D1..D5 do decodificador para cada fluxo, antes da fusão."""
        if img1.shape != img2.shape:
            raise DimensionError('schanger_forward', tuple(img1.shape), tuple(img2.shape), 'imagens t1/t2')
        self.check_input(img1, 'schanger_forward')
        n = img1.shape[0]
        feats = self.encode(torch.cat([img1, img2], dim=0))
        skips = []
        for s, f in enumerate(feats, start=1):
            a, b = self.attention[f"stage{s}"](f[:n], f[n:])
            skips.append(torch.cat([a, b], dim=0))
        return [(d[:n], d[n:]) for d in self.decode(skips)]

    def forward(self, img1: torch.Tensor, img2: torch.Tensor) -> List[torch.Tensor]:
        streams = self.stream_features(img1, img2)
        fused = [self.fusion[f"stage{s}"](a, b) for s, (a, b) in enumerate(streams, start=1)]
        return self.head(fused, tuple(img1.shape[2:]))


# ==================== GRAFO + CHECKPOINT ====================

@dataclass
class ModelGraph:
    """Rede construída, seu modo e sua variante."""

    model: SPNet
    mode: str
    variant: VariantConfig

    def layers(self) -> List[Tuple[str, nn.Module]]:
        """Camadas folha (Conv/Norm) na ordem de construção."""
        return [(name, m) for name, m in self.model.named_modules() if isinstance(m, (Conv, Norm))]

    def parameter_paths(self) -> List[str]:
        return [name for name, _ in self.model.named_parameters()]

    def paths(self) -> List[str]:
        return list(self.model.state_dict())

    def snapshot(self, seed: Optional[int] = None, **extra) -> Checkpoint:
        meta = {'mode': self.mode, 'format_version': FORMAT_VERSION, **self.variant.to_metadata()}
        if seed is not None:
            meta['seed'] = seed
        meta.update(extra)
        return Checkpoint.from_module(self.model, meta)

    def check_compatible(self, ckpt: Checkpoint) -> None:
        """Valida modo/variante declarados nos metadados do checkpoint."""
        mode = ckpt.metadata.get('mode')
        variant = ckpt.metadata.get('variant')
        if variant is not None and variant != self.variant.name:
            raise ConfigError(f"Checkpoint da variante '{variant}' incompatível com '{self.variant.name}'")
        if mode is not None and mode not in MODES:
            raise ConfigError(f"Modo de checkpoint desconhecido: {mode}")

    def load(self, ckpt: Checkpoint) -> None:
        """
        Copia os tensores do checkpoint para a rede.

        Raises:
            CheckpointError: caminhos ausentes (lista incluída) ou formas divergentes
        """
        self.check_compatible(ckpt)
        state = self.model.state_dict()
        missing = [p for p in state if p not in ckpt]
        if missing:
            raise CheckpointError(
                f"Checkpoint sem {len(missing)} caminho(s) exigidos pela {self.mode}: {', '.join(missing)}",
                missing_paths=missing)
        unexpected = [p for p in ckpt.paths() if p not in state]
        if unexpected:
            raise CheckpointError(f"Caminhos inesperados no checkpoint: {', '.join(unexpected)}")
        with torch.no_grad():
            for name, t in state.items():
                src = ckpt[name]
                if src.shape != t.shape:
                    raise CheckpointError(f"Forma divergente em '{name}': {tuple(src.shape)} != {tuple(t.shape)}")
                t.copy_(src)

    def write_back_buffers(self, ckpt: Checkpoint) -> None:
        """Atualiza no checkpoint as estatísticas de BN acumuladas em treino."""
        with torch.no_grad():
            for name, buf in self.model.named_buffers():
                if name in ckpt:
                    ckpt[name].copy_(buf)

    def set_generator(self, rng: Optional[torch.Generator]) -> None:
        for m in self.model.modules():
            if isinstance(m, DropPath):
                m.generator = rng


def _build(cls, cfg: VariantConfig, seed: int) -> Tuple[ModelGraph, Checkpoint]:
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        model = cls(cfg)
    graph = ModelGraph(model, cls.mode, cfg)
    ckpt = graph.snapshot(seed)
    logger.info(f"{cls.__name__}-{cfg.name} construída (semente {seed}, "
                f"{ckpt.param_count()} parâmetros)")
    return graph, ckpt


def build_spnet(cfg: VariantConfig, seed: int = 0) -> Tuple[ModelGraph, Checkpoint]:
    """Constrói a SPNet e o checkpoint inicial determinístico."""
    return _build(SPNet, cfg, seed)


def build_schanger(cfg: VariantConfig, seed: int = 0) -> Tuple[ModelGraph, Checkpoint]:
    """Constrói a SChanger e o checkpoint inicial determinístico."""
    return _build(SChanger, cfg, seed)


def build_graph(mode: str, cfg: VariantConfig, seed: int = 0) -> Tuple[ModelGraph, Checkpoint]:
    if mode not in MODES:
        raise ConfigError(f"Modo inválido: {mode}")
    return build_spnet(cfg, seed) if mode == 'spnet' else build_schanger(cfg, seed)


def _run(g: ModelGraph, ckpt: Checkpoint, training: bool, rng: Optional[torch.Generator], *images):
    g.load(ckpt)
    g.set_generator(rng)
    g.model.train(training)
    outputs = g.model(*images)
    if training:
        g.write_back_buffers(ckpt)
    return outputs


def spnet_forward(g: ModelGraph, ckpt: Checkpoint, image: torch.Tensor, training: bool = False,
                  rng: Optional[torch.Generator] = None) -> List[torch.Tensor]:
    """Seis mapas de logits (sem sigmoid) em resolução cheia."""
    if g.mode != 'spnet':
        raise ConfigError("spnet_forward exige um grafo SPNet")
    return _run(g, ckpt, training, rng, image)


def schanger_forward(g: ModelGraph, ckpt: Checkpoint, img1: torch.Tensor, img2: torch.Tensor,
                     training: bool = False, rng: Optional[torch.Generator] = None) -> List[torch.Tensor]:
    """Forward bitemporal; seis mapas de logits em resolução cheia."""
    if g.mode != 'schanger':
        raise ConfigError("schanger_forward exige um grafo SChanger")
    return _run(g, ckpt, training, rng, img1, img2)


def tfm_paths(paths: Sequence[str]) -> List[str]:
    """Caminhos pertencentes aos TFMs (SAF nos blocos de atenção, SFA na fusão)."""
    return [p for p in paths if '.tfm.' in p or p.startswith('fusion.')]
