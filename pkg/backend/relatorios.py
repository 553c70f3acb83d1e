"""
Exportação de relatórios tabulares (CSV e planilhas Excel).

Usado pela tabela de eficiência, pelas métricas por tile e pelo histórico
de loss. As planilhas seguem o mesmo estilo: cabeçalho em negrito com fundo
cinza, colunas de largura fixa e linha de TOTAL opcional.
"""

from __future__ import annotations

import csv
import logging
from pathlib import Path
from typing import Any, Dict, Optional, Sequence

from errors import ConfigError, DataError


logger = logging.getLogger('schanger.relatorios')


def escrever_csv(path, colunas: Sequence[str], linhas: Sequence[Sequence[Any]]) -> Path:
    """
    Grava linhas em CSV com cabeçalho.

    Args:
        path: Arquivo de destino
        colunas: Nomes das colunas
        linhas: Valores, uma sequência por linha

    Returns:
        Caminho gravado
    """
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, 'w', encoding='utf-8', newline='') as f:
            writer = csv.writer(f)
            writer.writerow(colunas)
            for linha in linhas:
                writer.writerow(linha)
    except OSError as e:
        raise DataError(f"Falha ao gravar CSV {path}: {e}") from e
    return path


def ler_csv(path) -> list[Dict[str, str]]:
    """Lê um CSV com cabeçalho como lista de dicionários."""
    try:
        with open(path, 'r', encoding='utf-8', newline='') as f:
            return list(csv.DictReader(f))
    except OSError as e:
        raise DataError(f"Falha ao ler CSV {path}: {e}") from e


def exportar_planilha(path, titulo: str, colunas: Sequence[str], linhas: Sequence[Sequence[Any]],
                      total: Optional[Dict[int, Any]] = None, largura: int = 20) -> Path:
    """
    Exporta uma tabela para .xlsx.

    Args:
        path: Arquivo .xlsx de destino
        titulo: Nome da aba
        colunas: Cabeçalhos
        linhas: Valores
        total: Valores da linha TOTAL indexados pela coluna (1-based)
        largura: Largura das colunas

    Returns:
        Caminho gravado
    """
    try:
        from openpyxl import Workbook
        from openpyxl.styles import Alignment, Font, PatternFill
        from openpyxl.utils import get_column_letter
    except ImportError as exc:
        raise ConfigError(f"Biblioteca 'openpyxl' não encontrada. Instale-a e tente novamente. ({exc})") from exc

    wb = Workbook()
    ws = wb.active
    ws.title = titulo[:31]

    header_font = Font(bold=True)
    header_fill = PatternFill("solid", fgColor="DDDDDD")

    for col_idx, label in enumerate(colunas, start=1):
        cell = ws.cell(row=1, column=col_idx, value=label)
        cell.font = header_font
        cell.fill = header_fill
        cell.alignment = Alignment(horizontal="center")

    for row_idx, linha in enumerate(linhas, start=2):
        for col_idx, val in enumerate(linha, start=1):
            ws.cell(row=row_idx, column=col_idx, value=val)

    for col_idx in range(1, len(colunas) + 1):
        ws.column_dimensions[get_column_letter(col_idx)].width = largura

    if total:
        last_row = len(linhas) + 2
        ws.cell(row=last_row, column=1, value="TOTAL").font = header_font
        for col_idx, val in total.items():
            ws.cell(row=last_row, column=col_idx, value=val).font = header_font

    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        wb.save(path)
    except OSError as exc:
        raise DataError(f"Falha ao salvar Excel {path}: {exc}") from exc

    logger.info(f"Planilha gerada: {path}")
    return path
