"""
Transformação SCN: infla um checkpoint SPNet pré-treinado em uma
inicialização SChanger.

Todos os caminhos da SPNet são copiados bit a bit; apenas os TFMs (SAF nos
blocos de atenção e SFA antes da cabeça) recebem inicialização aleatória.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Tuple

from data_io import Checkpoint
from errors import CheckpointError, ConfigError, DataError
from networks import VariantConfig, build_schanger, tfm_paths


logger = logging.getLogger('schanger.scn')


@dataclass
class InflationReport:
    """Resumo da inflação: caminhos herdados, caminhos novos e custo relativo."""

    copied_paths: List[str]
    new_paths: List[str]
    copied_param_count: int
    new_param_count: int
    shapes: Dict[str, Tuple[int, ...]] = field(default_factory=dict)
    counts: Dict[str, int] = field(default_factory=dict)

    @property
    def delta_fraction(self) -> float:
        total = self.new_param_count + self.copied_param_count
        return self.new_param_count / total if total else 0.0

    def to_table(self) -> str:
        """Tabela legível (caminho, forma, contagem, origem)."""
        rows = [(p, 'spnet') for p in self.copied_paths] + [(p, 'novo') for p in self.new_paths]
        width = max([len(p) for p, _ in rows] + [len('caminho')])
        lines = [f"{'caminho':<{width}}  {'forma':<20} {'contagem':>10}  origem",
                 '-' * (width + 44)]
        for path, origin in rows:
            shape = 'x'.join(str(d) for d in self.shapes.get(path, ())) or '-'
            lines.append(f"{path:<{width}}  {shape:<20} {self.counts.get(path, 0):>10}  {origin}")
        lines.append('-' * (width + 44))
        lines.append(f"Parâmetros herdados: {self.copied_param_count}")
        lines.append(f"Parâmetros novos (ΔParams): {self.new_param_count} "
                     f"({self.delta_fraction * 100:.1f}% do total)")
        return '\n'.join(lines)

    def save(self, path) -> Path:
        """Grava a tabela em texto e o resumo estruturado em JSON ao lado."""
        path = Path(path)
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(self.to_table() + '\n', encoding='utf-8')
            summary = {
                'copied_param_count': self.copied_param_count,
                'new_param_count': self.new_param_count,
                'delta_fraction': self.delta_fraction,
                'new_paths': self.new_paths,
                'copied_paths': self.copied_paths,
            }
            path.with_suffix('.json').write_text(json.dumps(summary, indent=2, ensure_ascii=False),
                                                 encoding='utf-8')
        except OSError as e:
            raise DataError(f"Falha ao gravar relatório de inflação: {e}") from e
        return path


def inflate(spnet_ckpt: Checkpoint, cfg: VariantConfig, seed: int = 0) -> Tuple[Checkpoint, InflationReport]:
    """
    Gera a inicialização SChanger a partir de um checkpoint SPNet.

    Args:
        spnet_ckpt: Checkpoint produzido por build_spnet/pré-treino
        cfg: Variante alvo (deve coincidir com a do checkpoint)
        seed: Semente da inicialização dos TFMs

    Returns:
        (checkpoint SChanger, relatório)

    Raises:
        ConfigError: variante ou modo incompatível
        CheckpointError: caminho da SPNet ausente no checkpoint de origem
    """
    meta = spnet_ckpt.metadata
    if meta.get('mode', 'spnet') != 'spnet':
        raise ConfigError(f"Inflação exige um checkpoint SPNet (modo recebido: {meta.get('mode')})")
    if meta.get('variant', cfg.name) != cfg.name:
        raise ConfigError(f"Variante do checkpoint '{meta.get('variant')}' difere da solicitada '{cfg.name}'")

    _, target = build_schanger(cfg, seed)
    new = tfm_paths(target.paths())
    new_set = set(new)
    expected = [p for p in target.paths() if p not in new_set]

    missing = [p for p in expected if p not in spnet_ckpt]
    if missing:
        raise CheckpointError(f"Checkpoint SPNet sem {len(missing)} caminho(s): {', '.join(missing)}",
                              missing_paths=missing)
    extra = [p for p in spnet_ckpt.paths() if p not in target]
    if extra:
        raise ConfigError(f"Checkpoint contém caminhos desconhecidos pela SChanger-{cfg.name}: {', '.join(extra[:5])}")

    for p in expected:
        if spnet_ckpt[p].shape != target[p].shape:
            raise ConfigError(f"Forma divergente em '{p}': checkpoint de outra variante?")
        target.tensors[p] = spnet_ckpt[p].detach().clone()

    target.metadata.update({'mode': 'schanger', 'seed': seed, 'source': 'scn',
                            'source_seed': meta.get('seed')})

    trainable = set(target.parameter_paths())
    report = InflationReport(
        copied_paths=expected,
        new_paths=new,
        copied_param_count=sum(target[p].numel() for p in expected if p in trainable),
        new_param_count=sum(target[p].numel() for p in new if p in trainable),
        shapes={p: tuple(target[p].shape) for p in target.paths()},
        counts={p: target[p].numel() for p in target.paths()},
    )
    logger.info(f"Inflação SCN ({cfg.name}): {len(expected)} caminhos herdados, {len(new)} novos, "
                f"ΔParams={report.new_param_count} ({report.delta_fraction * 100:.1f}%)")
    return target, report


def finetune_mode(ckpt: Checkpoint) -> List[str]:
    """
    Caminhos treináveis no ajuste fino: todos os parâmetros, sem congelamento.

    Estatísticas correntes de BN não são parâmetros e ficam de fora.
    """
    return list(ckpt.parameter_paths())
