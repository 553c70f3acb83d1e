"""
Configuração das execuções da CLI.

Arquivos INI (configparser) com as seções [run], [train], [loss],
[augment] e [data]. Precedência: flag da CLI > arquivo > padrão do
dataclass. A variável de ambiente SCHANGER_OUT_DIR troca apenas a raiz do
diretório de saída.
"""

from __future__ import annotations

import configparser
import dataclasses
import logging
import os
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, Mapping, Optional

from errors import ConfigError
from networks import VariantConfig, get_variant
from training import AugmentationConfig, LossConfig, TrainConfig
from validators import (validar_fracao, validar_limiar, validar_tamanho_entrada, validar_taxa_droppath,
                        validar_variante)


logger = logging.getLogger('schanger.config')

OUT_DIR_ENV = 'SCHANGER_OUT_DIR'
DEFAULT_OUT_ROOT = 'runs'
RESOLVED_CONFIG_NAME = 'resolved_config.ini'

_TRUE = {'1', 'true', 'yes', 'on', 'sim'}
_FALSE = {'0', 'false', 'no', 'off', 'nao', 'não'}


@dataclass
class RunSection:
    """Opções gerais da execução."""

    variant: str = 'small'
    seed: int = 0
    fusion: str = 'tfm_ln'
    droppath_rate: float = 0.0
    tile: int = 256
    threshold: float = 0.5

    def validate(self) -> None:
        for ok, msg in (validar_variante(self.variant), validar_limiar(self.threshold),
                        validar_taxa_droppath(self.droppath_rate, permitir_um=True),
                        validar_tamanho_entrada(self.tile, self.tile)):
            if not ok:
                raise ConfigError(msg)
        if self.seed < 0:
            raise ConfigError("A semente não pode ser negativa")


@dataclass
class DataSection:
    """Dataset e geração sintética."""

    root: str = ''
    split: str = 'train'
    val_split: str = 'val'
    fraction: float = 1.0
    size: int = 256
    n_train: int = 200
    n_val: int = 50
    change_density: float = 0.1

    def validate(self) -> None:
        ok, msg = validar_fracao(self.fraction)
        if not ok:
            raise ConfigError(msg)
        ok, msg = validar_tamanho_entrada(self.size, self.size)
        if not ok:
            raise ConfigError(msg)
        if self.n_train < 1 or self.n_val < 0:
            raise ConfigError("n_train deve ser >= 1 e n_val >= 0")
        if not 0.0 <= self.change_density <= 1.0:
            raise ConfigError(f"change_density fora de [0, 1]: {self.change_density}")


SECTIONS = {
    'run': RunSection,
    'train': TrainConfig,
    'loss': LossConfig,
    'augment': AugmentationConfig,
    'data': DataSection,
}


@dataclass
class RunConfig:
    """Valores resolvidos de todas as seções, mais o diretório de saída."""

    command: str
    out_dir: Path
    run: RunSection = field(default_factory=RunSection)
    train: TrainConfig = field(default_factory=TrainConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    augment: AugmentationConfig = field(default_factory=AugmentationConfig)
    data: DataSection = field(default_factory=DataSection)
    config_path: Optional[Path] = None

    @property
    def seed(self) -> int:
        return self.run.seed

    def variant(self) -> VariantConfig:
        return get_variant(self.run.variant, fusion=self.run.fusion, droppath_rate=self.run.droppath_rate)

    def to_parser(self) -> configparser.ConfigParser:
        parser = configparser.ConfigParser()
        for name in SECTIONS:
            section = getattr(self, name)
            parser[name] = {f.name: _format_value(getattr(section, f.name)) for f in dataclasses.fields(section)}
        return parser

    def save(self, path=None) -> Path:
        """Grava o INI resolvido (por padrão em out_dir/resolved_config.ini)."""
        path = Path(path) if path else self.out_dir / RESOLVED_CONFIG_NAME
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, 'w', encoding='utf-8') as f:
            self.to_parser().write(f)
        return path


# ==================== CONVERSÃO ====================

def _format_value(value: Any) -> str:
    if isinstance(value, (tuple, list)):
        return ', '.join(_format_value(v) for v in value)
    if isinstance(value, bool):
        return 'true' if value else 'false'
    return str(value)


def _coerce(raw: str, default: Any, key: str) -> Any:
    """Converte o texto do INI para o tipo do valor padrão do campo."""
    text = raw.strip()
    try:
        if isinstance(default, bool):
            low = text.lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ValueError(text)
        if isinstance(default, tuple):
            items = [t.strip() for t in text.split(',') if t.strip()]
            kind = type(default[0]) if default else str
            return tuple(kind(t) for t in items)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        return text
    except ValueError as e:
        raise ConfigError(f"Valor inválido para '{key}': '{raw}'") from e


def read_config_file(path) -> Dict[str, Dict[str, str]]:
    """
    Lê um INI e devolve {seção: {chave: texto}}.

    Raises:
        ConfigError: arquivo ausente, sintaxe inválida, seção ou chave desconhecida
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"Arquivo de configuração não encontrado: {path}")
    parser = configparser.ConfigParser()
    try:
        parser.read(path, encoding='utf-8')
    except configparser.Error as e:
        raise ConfigError(f"Arquivo de configuração inválido ({path}): {e}") from e

    values: Dict[str, Dict[str, str]] = {}
    for section in parser.sections():
        if section not in SECTIONS:
            raise ConfigError(f"Seção desconhecida [{section}] em {path}")
        known = {f.name for f in dataclasses.fields(SECTIONS[section])}
        for key, raw in parser[section].items():
            if key not in known:
                raise ConfigError(f"Chave desconhecida '{key}' na seção [{section}] de {path}")
        values[section] = dict(parser[section])
    return values


def _build_section(name: str, file_values: Mapping[str, str], cli_values: Mapping[str, Any]):
    cls = SECTIONS[name]
    section = cls()
    known = {f.name for f in dataclasses.fields(cls)}
    for key, raw in file_values.items():
        setattr(section, key, _coerce(raw, getattr(section, key), f"{name}.{key}"))
    for key, value in cli_values.items():
        if value is None:
            continue
        if key not in known:
            raise ConfigError(f"Opção desconhecida '{key}' para a seção [{name}]")
        setattr(section, key, value)
    section.validate()
    return section


def default_out_dir(command: str, now: Optional[datetime] = None) -> Path:
    stamp = (now or datetime.now()).strftime('%Y%m%d_%H%M%S')
    root = os.environ.get(OUT_DIR_ENV) or DEFAULT_OUT_ROOT
    return Path(root) / f"{command}-{stamp}"


def resolve_run_config(command: str, cli: Optional[Mapping[str, Mapping[str, Any]]] = None,
                       config_path=None, out=None, now: Optional[datetime] = None) -> RunConfig:
    """
    Mescla padrões, arquivo e flags da CLI.

    Args:
        command: Nome do subcomando
        cli: {seção: {campo: valor}} vindos da CLI (None = não informado)
        config_path: Arquivo INI opcional
        out: Diretório de saída explícito (--out)
        now: Instante usado no nome do diretório padrão

    Returns:
        RunConfig validado
    """
    cli = cli or {}
    unknown = set(cli) - set(SECTIONS)
    if unknown:
        raise ConfigError(f"Seções desconhecidas: {sorted(unknown)}")
    file_values = read_config_file(config_path) if config_path else {}

    sections = {name: _build_section(name, file_values.get(name, {}), cli.get(name, {})) for name in SECTIONS}
    out_dir = Path(out) if out else default_out_dir(command, now)
    cfg = RunConfig(command=command, out_dir=out_dir, config_path=Path(config_path) if config_path else None,
                    **sections)
    # A semente da execução também governa o treino
    if cli.get('train', {}).get('seed') is None and 'seed' not in file_values.get('train', {}):
        cfg.train.seed = cfg.run.seed
    logger.info(f"Configuração resolvida para '{command}' (saída: {out_dir})")
    return cfg
