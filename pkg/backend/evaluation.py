"""
Métricas da classe de mudança e avaliação por tiles.

Apenas a cabeça fundida (sexta saída) é pontuada. Imagens menores que o
tile usam um tile do tamanho da imagem arredondado para múltiplo de 16;
imagens que não se dividem em tiles inteiros são completadas com zeros à
direita/abaixo e só os pixels válidos entram na contagem.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, List, Tuple, Union

import torch
import torch.nn.functional as F

from data_io import SamplePair, SegSample, normalize_image, write_prediction
from errors import ConfigError, DataError, DimensionError
from networks import ModelGraph
from relatorios import escrever_csv, exportar_planilha
from validators import validar_limiar


logger = logging.getLogger('schanger.evaluation')

TILE_MULTIPLE = 16

Sample = Union[SamplePair, SegSample]
# Uma amostra já carregada ou um par (id, carregador) de data_io.lazy_cd_dataset
DatasetItem = Union[Sample, Tuple[str, Callable[[], Sample]]]


@dataclass(frozen=True)
class ConfusionCounts:
    """Contagens de pixels com "mudança" como classe positiva."""

    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    def __post_init__(self):
        if min(self.tp, self.fp, self.fn, self.tn) < 0:
            raise ConfigError("Contagens de confusão não podem ser negativas")

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn, self.tn + other.tn)

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


@dataclass
class TileRecord:
    sample_id: str
    top: int
    left: int
    counts: ConfusionCounts


@dataclass
class MetricReport:
    precision: float
    recall: float
    f1: float
    counts: ConfusionCounts
    degenerate: bool = False
    skipped: List[str] = field(default_factory=list)
    tiles: List[TileRecord] = field(default_factory=list)


# ==================== MÉTRICAS ====================

def binarize(prob_map: torch.Tensor, threshold: float = 0.5) -> torch.Tensor:
    """Máscara {0, 1} com a convenção prob >= limiar."""
    ok, msg = validar_limiar(threshold)
    if not ok:
        raise ConfigError(msg)
    prob_map = torch.as_tensor(prob_map)
    if not bool(((prob_map >= 0) & (prob_map <= 1)).all()):
        raise DataError("Probabilidades fora de [0, 1]")
    return (prob_map >= threshold).to(torch.uint8)


def _check_binary(t: torch.Tensor, name: str) -> torch.Tensor:
    t = torch.as_tensor(t)
    if not bool(((t == 0) | (t == 1)).all()):
        raise DataError(f"Máscara '{name}' não binária")
    return t.bool()


def accumulate(counts: ConfusionCounts, pred_mask: torch.Tensor, gt_mask: torch.Tensor) -> ConfusionCounts:
    """Soma à contagem a confusão pixel a pixel entre predição e referência."""
    pred = _check_binary(pred_mask, 'pred')
    gt = _check_binary(gt_mask, 'gt')
    if pred.shape != gt.shape:
        raise DimensionError('accumulate', tuple(gt.shape), tuple(pred.shape))
    tile = ConfusionCounts(
        tp=int((pred & gt).sum()),
        fp=int((pred & ~gt).sum()),
        fn=int((~pred & gt).sum()),
        tn=int((~pred & ~gt).sum()),
    )
    return counts + tile


def metrics(counts: ConfusionCounts) -> MetricReport:
    """
    Precisão, revocação e F1 da classe de mudança.

    Denominadores nulos produzem 0 e marcam o relatório como degenerado.
    """
    degenerate = False
    if counts.tp + counts.fp > 0:
        precision = counts.tp / (counts.tp + counts.fp)
    else:
        precision, degenerate = 0.0, True
    if counts.tp + counts.fn > 0:
        recall = counts.tp / (counts.tp + counts.fn)
    else:
        recall, degenerate = 0.0, True
    if precision + recall > 0:
        f1 = 2 * precision * recall / (precision + recall)
    else:
        f1, degenerate = 0.0, True
    return MetricReport(precision, recall, f1, counts, degenerate)


# ==================== INFERÊNCIA ====================

def tile_shape(height: int, width: int, tile: int = 256) -> Tuple[int, int]:
    """Tile efetivo por eixo: min(tile, dimensão arredondada para múltiplo de 16)."""
    if tile < TILE_MULTIPLE or tile % TILE_MULTIPLE:
        raise ConfigError(f"Tile deve ser múltiplo positivo de {TILE_MULTIPLE} (recebido {tile})")

    def _clamp(dim: int) -> int:
        return min(tile, TILE_MULTIPLE * math.ceil(dim / TILE_MULTIPLE))

    return _clamp(height), _clamp(width)


def _tile_origins(height: int, width: int, th: int, tw: int) -> List[Tuple[int, int]]:
    return [(top, left) for top in range(0, height, th) for left in range(0, width, tw)]


def _inputs(graph: ModelGraph, sample: Sample) -> List[torch.Tensor]:
    if graph.mode == 'schanger':
        if not isinstance(sample, SamplePair):
            raise ConfigError("A SChanger avalia apenas pares bitemporais")
        return [sample.image_t1, sample.image_t2]
    if isinstance(sample, SamplePair):
        raise ConfigError("A SPNet avalia amostras de instante único")
    return [sample.image]


@torch.no_grad()
def predict_probability(graph: ModelGraph, sample: Sample, tile: int = 256) -> torch.Tensor:
    """
    Mapa de probabilidade (H, W) da cabeça fundida, em modo de avaliação.

    O grafo já deve conter os pesos (``graph.load``).
    """
    images = _inputs(graph, sample)
    h, w = int(images[0].shape[-2]), int(images[0].shape[-1])
    th, tw = tile_shape(h, w, tile)
    ph, pw = th * math.ceil(h / th), tw * math.ceil(w / tw)

    padded = [F.pad(normalize_image(img), (0, pw - w, 0, ph - h))[None] for img in images]
    graph.model.eval()
    prob = torch.zeros(ph, pw)
    for top, left in _tile_origins(ph, pw, th, tw):
        crops = [x[..., top:top + th, left:left + tw] for x in padded]
        fused = graph.model(*crops)[-1]
        prob[top:top + th, left:left + tw] = torch.sigmoid(fused[0, 0]).float()
    return prob[:h, :w]


def _resolve(item: DatasetItem) -> Tuple[str, Sample]:
    if isinstance(item, tuple):
        sid, loader = item
        return sid, loader()
    return item.id, item


def evaluate(graph: ModelGraph, ckpt, dataset: Iterable[DatasetItem], tile: int = 256,
             threshold: float = 0.5, progress: bool = False) -> MetricReport:
    """
    Avalia um checkpoint sobre um dataset, acumulando a confusão por tile.

    Args:
        graph: Rede construída
        ckpt: Checkpoint avaliado (tipicamente o EMA)
        dataset: Amostras ou pares (id, carregador)
        tile: Tamanho do tile de inferência
        threshold: Limiar de binarização
        progress: Barra de progresso tqdm

    Returns:
        MetricReport com contagens globais, tiles e amostras ignoradas
    """
    ok, msg = validar_limiar(threshold)
    if not ok:
        raise ConfigError(msg)
    graph.load(ckpt)

    items = list(dataset)
    if progress:
        from tqdm import tqdm
        items = tqdm(items, desc='avaliação', unit='amostra')

    total = ConfusionCounts()
    tiles: List[TileRecord] = []
    skipped: List[str] = []
    for item in items:
        sid = item[0] if isinstance(item, tuple) else getattr(item, 'id', '?')
        try:
            sid, sample = _resolve(item)
            pred = binarize(predict_probability(graph, sample, tile), threshold)
            gt = sample.mask[0]
            h, w = gt.shape
            th, tw = tile_shape(h, w, tile)
            for top, left in _tile_origins(h, w, th, tw):
                region = (slice(top, min(top + th, h)), slice(left, min(left + tw, w)))
                counts = accumulate(ConfusionCounts(), pred[region], gt[region])
                tiles.append(TileRecord(sid, top, left, counts))
                total = total + counts
        except (DataError, DimensionError) as e:
            logger.warning(f"Amostra '{sid}' ignorada na avaliação: {e}")
            skipped.append(sid)

    if not tiles:
        raise DataError("Nenhuma amostra pôde ser avaliada")

    report = metrics(total)
    report.skipped = skipped
    report.tiles = tiles
    logger.info(f"Avaliação: P={report.precision:.4f} R={report.recall:.4f} F1={report.f1:.4f} "
                f"({len(tiles)} tiles, {len(skipped)} ignoradas)")
    return report


# ==================== SAÍDAS ====================

def format_report(report: MetricReport) -> str:
    c = report.counts
    lines = [
        f"precision: {report.precision:.4f}",
        f"recall:    {report.recall:.4f}",
        f"f1:        {report.f1:.4f}",
        f"tp={c.tp} fp={c.fp} fn={c.fn} tn={c.tn} (total {c.total})",
        f"tiles: {len(report.tiles)}  amostras ignoradas: {len(report.skipped)}",
    ]
    if report.degenerate:
        lines.append("[Aviso] denominador nulo: métricas degeneradas reportadas como 0")
    if report.skipped:
        lines.append("ignoradas: " + ', '.join(report.skipped))
    return '\n'.join(lines)


TILE_COLUMNS = ['sample_id', 'top', 'left', 'tp', 'fp', 'fn', 'tn', 'precision', 'recall', 'f1']


def _tile_rows(report: MetricReport) -> List[list]:
    rows = []
    for t in report.tiles:
        m = metrics(t.counts)
        rows.append([t.sample_id, t.top, t.left, t.counts.tp, t.counts.fp, t.counts.fn, t.counts.tn,
                     round(m.precision, 4), round(m.recall, 4), round(m.f1, 4)])
    return rows


def write_tiles_csv(report: MetricReport, path) -> Path:
    return escrever_csv(path, TILE_COLUMNS, _tile_rows(report))


def export_tiles_xlsx(report: MetricReport, path) -> Path:
    """Planilha por tile com a linha TOTAL das contagens."""
    c = report.counts
    total = {4: c.tp, 5: c.fp, 6: c.fn, 7: c.tn,
             8: round(report.precision, 4), 9: round(report.recall, 4), 10: round(report.f1, 4)}
    return exportar_planilha(path, 'Métricas por tile', TILE_COLUMNS, _tile_rows(report), total)


def write_predictions(graph: ModelGraph, ckpt, dataset: Iterable[DatasetItem], out_dir, tile: int = 256,
                      threshold: float = 0.5, composite: bool = True) -> List[Path]:
    """Grava a máscara predita (e a composição TP/FP/FN) de cada amostra."""
    graph.load(ckpt)
    out_dir = Path(out_dir)
    written: List[Path] = []
    for item in dataset:
        sid = item[0] if isinstance(item, tuple) else getattr(item, 'id', '?')
        try:
            sid, sample = _resolve(item)
            prob = predict_probability(graph, sample, tile)
        except (DataError, DimensionError) as e:
            logger.warning(f"Amostra '{sid}' ignorada na predição: {e}")
            continue
        written.append(write_prediction(prob, out_dir / f"{sid}.png", 'mask', threshold=threshold))
        if composite:
            written.append(write_prediction(prob, out_dir / f"{sid}_composite.png", 'composite',
                                            gt=sample.mask, threshold=threshold))
    logger.info(f"{len(written)} raster(s) de predição gravados em {out_dir}")
    return written
