"""
Módulo de validações de parâmetros para o toolkit SChanger.
Contém funções para validar variantes, tamanhos de entrada, probabilidades,
limiares, frações e caminhos informados pelo usuário ou por arquivos de
configuração.
"""

import math
from pathlib import Path
from typing import Iterable


VARIANTES_VALIDAS = ('small', 'base')
FRACOES_FEW_SHOT = (0.05, 0.10, 0.20, 0.30, 1.0)


def validar_variante(nome: str) -> tuple[bool, str]:
    """
    Valida o nome de uma variante de rede.

    Args:
        nome: Nome da variante ('small' ou 'base')

    Returns:
        Tupla (válido, mensagem_erro)
    """
    if not nome or not str(nome).strip():
        return False, "A variante não pode estar vazia."

    if str(nome).strip().lower() not in VARIANTES_VALIDAS:
        return False, f"Variante inválida: {nome}. Use uma de {', '.join(VARIANTES_VALIDAS)}."

    return True, ""


def validar_tamanho_entrada(altura: int, largura: int, multiplo: int = 16) -> tuple[bool, str]:
    """
    Valida que as dimensões espaciais são múltiplos positivos de ``multiplo``.

    Cinco níveis de max pooling exigem mapas pares até a resolução 1/16.
    """
    for nome, valor in (('altura', altura), ('largura', largura)):
        if not isinstance(valor, int) or isinstance(valor, bool):
            return False, f"A {nome} deve ser um inteiro."
        if valor <= 0:
            return False, f"A {nome} deve ser positiva."
        if valor % multiplo != 0:
            return False, f"A {nome} ({valor}) deve ser múltiplo de {multiplo}."

    return True, ""


def validar_probabilidade(valor: float, campo: str = "probabilidade") -> tuple[bool, str]:
    """Valida um valor no intervalo fechado [0, 1]."""
    try:
        v = float(valor)
    except (TypeError, ValueError):
        return False, f"O campo '{campo}' deve ser numérico."

    if math.isnan(v) or v < 0.0 or v > 1.0:
        return False, f"O campo '{campo}' deve estar em [0, 1] (recebido {valor})."

    return True, ""


def validar_limiar(valor: float) -> tuple[bool, str]:
    """Valida o limiar de binarização (mesma faixa de uma probabilidade)."""
    return validar_probabilidade(valor, "limiar")


def validar_taxa_droppath(valor: float, permitir_um: bool = False) -> tuple[bool, str]:
    """
    Valida a taxa de droppath.

    Args:
        valor: Taxa solicitada
        permitir_um: Aceita 1.0 (ramo inteiro descartado em treino)
    """
    try:
        v = float(valor)
    except (TypeError, ValueError):
        return False, "A taxa de droppath deve ser numérica."

    limite_ok = v <= 1.0 if permitir_um else v < 1.0
    if math.isnan(v) or v < 0.0 or not limite_ok:
        faixa = "[0, 1]" if permitir_um else "[0, 1)"
        return False, f"A taxa de droppath deve estar em {faixa} (recebido {valor})."

    return True, ""


def validar_fracao(valor: float) -> tuple[bool, str]:
    """Valida a fração de treino usada no protocolo few-shot."""
    try:
        v = float(valor)
    except (TypeError, ValueError):
        return False, "A fração deve ser numérica."

    if not 0.0 < v <= 1.0:
        return False, f"A fração deve estar em (0, 1] (recebido {valor})."

    return True, ""


def validar_valor_positivo(valor, campo: str) -> tuple[bool, str]:
    """
    Valida se um valor numérico é estritamente positivo.

    Args:
        valor: Valor a ser validado
        campo: Nome do campo (para mensagem de erro)

    Returns:
        Tupla (válido, mensagem_erro)
    """
    try:
        v = float(valor)
    except (TypeError, ValueError):
        return False, f"O campo '{campo}' deve ser numérico."

    if not math.isfinite(v) or v <= 0:
        return False, f"O campo '{campo}' deve ser maior que zero."

    return True, ""


def validar_inteiro_nao_negativo(valor, campo: str) -> tuple[bool, str]:
    """Valida um inteiro >= 0 (contagens de épocas, passos, pares)."""
    if isinstance(valor, bool) or not isinstance(valor, int):
        return False, f"O campo '{campo}' deve ser inteiro."
    if valor < 0:
        return False, f"O campo '{campo}' não pode ser negativo."
    return True, ""


def validar_diretorio_existente(caminho, campo: str = "diretório") -> tuple[bool, str]:
    """Valida que o caminho informado existe e é um diretório."""
    if not caminho or not str(caminho).strip():
        return False, f"O campo '{campo}' é obrigatório."

    p = Path(caminho)
    if not p.exists():
        return False, f"Caminho não encontrado: {p}"
    if not p.is_dir():
        return False, f"O caminho não é um diretório: {p}"

    return True, ""


def validar_arquivo_existente(caminho, campo: str = "arquivo") -> tuple[bool, str]:
    """Valida que o caminho informado existe e é um arquivo."""
    if not caminho or not str(caminho).strip():
        return False, f"O campo '{campo}' é obrigatório."

    p = Path(caminho)
    if not p.is_file():
        return False, f"Arquivo não encontrado: {p}"

    return True, ""


def validar_pesos_lambda(valores: Iterable[float]) -> tuple[bool, str]:
    """Valida os seis pesos de supervisão profunda (não negativos, finitos)."""
    lista = list(valores)
    if len(lista) != 6:
        return False, f"São necessários 6 pesos lambda (recebidos {len(lista)})."
    for v in lista:
        if not math.isfinite(float(v)) or float(v) < 0:
            return False, f"Peso lambda inválido: {v}."
    return True, ""
