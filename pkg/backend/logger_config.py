"""
Configuração de logging estruturado para o toolkit SChanger.

Este módulo fornece logging com rotação automática de arquivos e
formatação padronizada para acompanhar treinos longos e diagnosticar
falhas numéricas.
"""

import logging
from logging.handlers import RotatingFileHandler
from pathlib import Path


LOG_DIR = Path.home() / '.schanger' / 'logs'
LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - [%(filename)s:%(lineno)d] - %(message)s'


def setup_logger(name='schanger', level=logging.INFO):
    """
    Configura e retorna um logger com rotação de arquivos.

    Loggers filhos (``schanger.training`` etc.) não recebem handlers
    próprios; propagam para o logger raiz ``schanger``.

    Args:
        name: Nome do logger
        level: Nível de logging (DEBUG, INFO, WARNING, ERROR, CRITICAL)

    Returns:
        Logger configurado
    """
    logger = logging.getLogger(name)

    # Evitar duplicação de handlers
    if logger.handlers or '.' in name:
        return logger

    logger.setLevel(level)

    formatter = logging.Formatter(LOG_FORMAT, datefmt='%Y-%m-%d %H:%M:%S')

    # Handler para arquivo com rotação (opcional se o diretório não for gravável)
    try:
        LOG_DIR.mkdir(parents=True, exist_ok=True)
        file_handler = RotatingFileHandler(
            LOG_DIR / 'schanger.log',
            maxBytes=10*1024*1024,  # 10MB
            backupCount=5,
            encoding='utf-8'
        )
        file_handler.setLevel(level)
        file_handler.setFormatter(formatter)
        logger.addHandler(file_handler)
    except OSError as e:
        print(f"[Aviso] Log em arquivo desativado: {e}")

    # Handler para console (apenas WARNING e acima)
    console_handler = logging.StreamHandler()
    console_handler.setLevel(logging.WARNING)
    console_handler.setFormatter(formatter)
    logger.addHandler(console_handler)

    return logger


def set_console_level(logger, level):
    """Ajusta apenas o nível dos handlers de console (usado por --verbose)."""
    for handler in logger.handlers:
        if type(handler) is logging.StreamHandler:
            handler.setLevel(level)


def log_training_step(logger, epoch, step, loss, lr, details=None):
    """
    Registra um passo de otimização de forma padronizada.

    Args:
        logger: Logger configurado
        epoch: Época atual
        step: Passo global
        loss: Valor da loss no passo
        lr: Taxa de aprendizado aplicada
        details: Detalhes adicionais (opcional)
    """
    msg = f"Época {epoch} passo {step} - loss={loss:.6f} lr={lr:.3e}"
    if details:
        msg += f" - {details}"

    logger.info(msg)


def log_numeric_error(logger, operation, error, context=None):
    """
    Registra falha numérica ou de forma de forma padronizada.

    Args:
        logger: Logger configurado
        operation: Operação que falhou
        error: Exceção capturada
        context: Contexto adicional (opcional)
    """
    msg = f"Erro numérico na operação '{operation}': {str(error)}"
    if context:
        msg += f" | Contexto: {context}"

    logger.error(msg, exc_info=True)


def log_run_event(logger, command, action, details=None):
    """Registra um evento do ciclo de vida de um comando da CLI."""
    msg = f"Comando {command} - {action}"
    if details:
        msg += f" - {details}"
    logger.info(msg)


# Logger global do sistema
system_logger = setup_logger()
