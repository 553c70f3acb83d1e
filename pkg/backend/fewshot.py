"""
Protocolo few-shot: ajuste fino da SChanger com frações do conjunto de
treino, comparando a inicialização por inflação SCN com a aleatória sob o
mesmo orçamento de épocas.
"""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from data_io import Checkpoint, SamplePair, fewshot_subset
from evaluation import evaluate
from networks import VariantConfig, build_schanger
from relatorios import escrever_csv, exportar_planilha
from scn import inflate
from training import AugmentationConfig, EpochRecord, LossConfig, TrainConfig, train
from validators import FRACOES_FEW_SHOT


logger = logging.getLogger('schanger.fewshot')

INITS = ('scn', 'random')


@dataclass
class FewShotRun:
    fraction: float
    seed: int
    init: str
    train_size: int
    precision: float
    recall: float
    f1: float
    history: List[EpochRecord]

    @property
    def final_loss(self) -> float:
        return self.history[-1].mean_loss if self.history else float('nan')


def run_fewshot(spnet_ckpt: Checkpoint, cfg: VariantConfig, train_pairs: Sequence[SamplePair],
                test_pairs: Sequence[SamplePair], fractions: Sequence[float] = FRACOES_FEW_SHOT,
                seeds: Sequence[int] = (0,), train_cfg: Optional[TrainConfig] = None,
                loss_cfg: Optional[LossConfig] = None, aug_cfg: Optional[AugmentationConfig] = None,
                tile: int = 256, threshold: float = 0.5) -> List[FewShotRun]:
    """
    Executa, para cada fração e semente, um ajuste fino a partir da inflação
    SCN e outro a partir de pesos aleatórios; ambos são avaliados (pesos EMA)
    no conjunto de teste.
    """
    train_cfg = train_cfg or TrainConfig()
    runs: List[FewShotRun] = []
    for fraction in fractions:
        for seed in seeds:
            subset = fewshot_subset(train_pairs, fraction, seed)
            inflated, _ = inflate(spnet_ckpt, cfg, seed)
            graph, random_ckpt = build_schanger(cfg, seed)
            starts = {'scn': inflated, 'random': random_ckpt}
            for init in INITS:
                result = train(graph, starts[init], subset, dataclasses.replace(train_cfg, seed=seed),
                               loss_cfg, aug_cfg)
                report = evaluate(graph, result.ema_checkpoint, test_pairs, tile, threshold)
                runs.append(FewShotRun(fraction, seed, init, len(subset), report.precision, report.recall,
                                       report.f1, result.history))
                logger.info(f"Few-shot {fraction:.0%} semente {seed} init={init}: F1={report.f1:.4f} "
                            f"({len(subset)} pares)")
    return runs


def summarize(runs: Sequence[FewShotRun]) -> List[list]:
    """Média e desvio do F1 por (fração, inicialização)."""
    rows = []
    for fraction in sorted({r.fraction for r in runs}):
        for init in INITS:
            f1s = [r.f1 for r in runs if r.fraction == fraction and r.init == init]
            if f1s:
                rows.append([fraction, init, len(f1s), round(float(np.mean(f1s)), 4), round(float(np.std(f1s)), 4)])
    return rows


SUMMARY_COLUMNS = ['fraction', 'init', 'runs', 'f1_mean', 'f1_std']
RUN_COLUMNS = ['fraction', 'seed', 'init', 'train_size', 'precision', 'recall', 'f1', 'final_loss']
CURVE_COLUMNS = ['fraction', 'seed', 'init', 'epoch', 'mean_loss', 'lr']


def _run_rows(runs: Sequence[FewShotRun]) -> List[list]:
    return [[r.fraction, r.seed, r.init, r.train_size, round(r.precision, 4), round(r.recall, 4),
             round(r.f1, 4), repr(r.final_loss)] for r in runs]


def _curve_rows(runs: Sequence[FewShotRun]) -> List[list]:
    return [[r.fraction, r.seed, r.init, e.epoch, repr(e.mean_loss), repr(e.lr)] for r in runs for e in r.history]


def write_fewshot_csv(runs: Sequence[FewShotRun], out_dir) -> List[Path]:
    """Grava fewshot_runs.csv, fewshot_summary.csv e loss_curves.csv."""
    out_dir = Path(out_dir)
    return [
        escrever_csv(out_dir / 'fewshot_runs.csv', RUN_COLUMNS, _run_rows(runs)),
        escrever_csv(out_dir / 'fewshot_summary.csv', SUMMARY_COLUMNS, summarize(runs)),
        escrever_csv(out_dir / 'loss_curves.csv', CURVE_COLUMNS, _curve_rows(runs)),
    ]


def export_fewshot_xlsx(runs: Sequence[FewShotRun], path) -> Path:
    return exportar_planilha(path, 'Few-shot', RUN_COLUMNS, _run_rows(runs))
