"""
Módulo auxiliar para registro de execuções da CLI.
Grava em cada diretório de saída um run_record.json com comando, argumentos,
semente, horários e artefatos produzidos.
"""

import json
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, Iterable, Optional

RUN_RECORD_NAME = 'run_record.json'


def criar_detalhes_json(dados: Dict[str, Any]) -> str:
    """
    Converte um dicionário em JSON para os detalhes do registro.

    Args:
        dados: Dicionário com os dados a serem convertidos

    Returns:
        String JSON formatada
    """
    try:
        return json.dumps(dados, ensure_ascii=False, default=str, indent=2)
    except (TypeError, ValueError) as e:
        print(f"[Aviso] Erro ao criar JSON de detalhes: {e}")
        return str(dados)


def registrar_execucao(
    out_dir,
    comando: str,
    argv: Iterable[str],
    semente: int,
    artefatos: Iterable[Any] = (),
    detalhes: Optional[Dict[str, Any]] = None,
    inicio: Optional[datetime] = None,
    status: str = 'ok',
) -> Optional[Path]:
    """
    Registra uma execução no diretório de saída.

    Args:
        out_dir: Diretório da execução
        comando: Subcomando executado
        argv: Argumentos da linha de comando
        semente: Semente resolvida
        artefatos: Caminhos produzidos
        detalhes: Informações adicionais (métricas, totais)
        inicio: Instante de início
        status: 'ok' ou o nome do erro

    Returns:
        Caminho do registro, ou None se não foi possível gravá-lo
    """
    out_dir = Path(out_dir)
    fim = datetime.now()
    registro = {
        'comando': comando,
        'argv': list(argv),
        'semente': semente,
        'inicio': (inicio or fim).isoformat(timespec='seconds'),
        'fim': fim.isoformat(timespec='seconds'),
        'status': status,
        'artefatos': [str(a) for a in artefatos],
        'detalhes': detalhes or {},
    }
    path = out_dir / RUN_RECORD_NAME
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        path.write_text(criar_detalhes_json(registro), encoding='utf-8')
    except OSError as e:
        print(f"[Aviso] Não foi possível registrar a execução em {path}: {e}")
        return None
    return path


def ler_registro(out_dir) -> Dict[str, Any]:
    """Lê o run_record.json de uma execução."""
    return json.loads((Path(out_dir) / RUN_RECORD_NAME).read_text(encoding='utf-8'))
