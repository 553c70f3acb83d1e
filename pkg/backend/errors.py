"""
Hierarquia de exceções do toolkit SChanger.

Cada exceção carrega o código de saída usado pela linha de comando
(main.py), de forma que erros de configuração, dados, numéricos e de
reconciliação terminem o processo com códigos consistentes.
"""

from __future__ import annotations

from typing import Optional, Sequence


class SChangerError(Exception):
    """Erro base do toolkit."""

    exit_code = 1


class ConfigError(SChangerError, ValueError):
    """Opção inválida, variante incompatível ou valor fora do domínio."""

    exit_code = 2


class DataError(SChangerError):
    """Arquivo ausente, raster ilegível ou dimensões incompatíveis."""

    exit_code = 3


class CheckpointError(DataError):
    """Checkpoint corrompido, truncado, de versão diferente ou incompleto."""

    def __init__(self, message: str, missing_paths: Optional[Sequence[str]] = None):
        super().__init__(message)
        self.missing_paths = list(missing_paths or [])


class DimensionError(SChangerError, ValueError):
    """Incompatibilidade de forma entre tensores."""

    exit_code = 3

    def __init__(self, operation: str, expected, actual, detail: str = ""):
        self.operation = operation
        self.expected = expected
        self.actual = actual
        msg = f"{operation}: esperado {expected}, recebido {actual}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class NumericError(SChangerError, ArithmeticError):
    """Valor NaN/Inf encontrado durante forward, backward ou na loss."""

    exit_code = 4

    def __init__(self, message: str, step: Optional[int] = None):
        if step is not None:
            message = f"{message} (passo {step})"
        super().__init__(message)
        self.step = step


class ReconciliationError(SChangerError):
    """Totais de parâmetros/FLOPs fora das tolerâncias declaradas."""

    exit_code = 5
