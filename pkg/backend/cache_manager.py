"""
Cache de rasters decodificados.

Os datasets de pasta releem os mesmos PNGs a cada época; o cache guarda as
matrizes já decodificadas, com validade por tempo, limite de entradas e de
bytes (descarte LRU). A chave de arquivo inclui mtime e tamanho, então um PNG
reescrito em disco nunca devolve a matriz antiga.
"""

from collections import OrderedDict
from datetime import datetime, timedelta
from functools import wraps
from pathlib import Path
from typing import Any, Callable, Dict, Optional


class CacheManager:
    """
    Cache LRU com timeout por entrada.

    ``max_entries`` e ``max_bytes`` são opcionais; o tamanho de um valor é o
    seu ``nbytes`` (matrizes numpy e tensores) ou zero.
    """

    def __init__(self, default_timeout: int = 3600, max_entries: Optional[int] = None,
                 max_bytes: Optional[int] = None):
        self._entries: "OrderedDict[str, tuple[Any, datetime, int]]" = OrderedDict()
        self._default_timeout = default_timeout
        self._max_entries = max_entries
        self._max_bytes = max_bytes
        self._bytes = 0
        self._hits = 0
        self._misses = 0
        self._evictions = 0

    def get(self, key: str) -> Optional[Any]:
        """Valor ainda válido para ``key`` ou None."""
        entry = self._entries.get(key)
        if entry is None:
            self._misses += 1
            return None
        value, expires, _ = entry
        if datetime.now() >= expires:
            self.invalidate(key)
            self._misses += 1
            return None
        self._entries.move_to_end(key)
        self._hits += 1
        return value

    def set(self, key: str, value: Any, timeout_seconds: Optional[int] = None) -> None:
        """
        Armazena ``value``; descarta as entradas menos usadas se algum limite estourar.

        Um valor maior que ``max_bytes`` sozinho não é armazenado.
        """
        size = int(getattr(value, 'nbytes', 0) or 0)
        if self._max_bytes is not None and size > self._max_bytes:
            return
        self.invalidate(key)
        while self._entries and self._over_limit(size):
            oldest = next(iter(self._entries))
            self.invalidate(oldest)
            self._evictions += 1
        timeout = self._default_timeout if timeout_seconds is None else timeout_seconds
        self._entries[key] = (value, datetime.now() + timedelta(seconds=timeout), size)
        self._bytes += size

    def _over_limit(self, incoming: int) -> bool:
        if self._max_entries is not None and len(self._entries) >= self._max_entries:
            return True
        return self._max_bytes is not None and self._bytes + incoming > self._max_bytes

    def invalidate(self, key: str) -> None:
        entry = self._entries.pop(key, None)
        if entry is not None:
            self._bytes -= entry[2]

    def invalidate_pattern(self, pattern: str) -> None:
        """Remove as entradas cuja chave contém ``pattern`` (ex.: um diretório)."""
        for key in [k for k in self._entries if pattern in k]:
            self.invalidate(key)

    def clear(self) -> None:
        self._entries.clear()
        self._bytes = 0
        self._hits = self._misses = self._evictions = 0

    def get_stats(self) -> Dict[str, Any]:
        now = datetime.now()
        expired = sum(1 for _, expires, _ in self._entries.values() if now >= expires)
        return {
            'total_entries': len(self._entries),
            'active_entries': len(self._entries) - expired,
            'expired_entries': expired,
            'bytes': self._bytes,
            'hits': self._hits,
            'misses': self._misses,
            'evictions': self._evictions,
        }


def file_key(prefix: str, path, *extra) -> str:
    """Chave ``prefix:caminho:mtime_ns:tamanho[:extra]``; arquivo ausente usa 0:0."""
    p = Path(path)
    try:
        st = p.stat()
        stamp = f"{st.st_mtime_ns}:{st.st_size}"
    except OSError:
        stamp = "0:0"
    key = f"{prefix}:{p}:{stamp}"
    if extra:
        key += ":" + ":".join(str(e) for e in extra)
    return key


def cached(timeout_seconds: int = 3600, key_prefix: str = ''):
    """
    Decorator para métodos ``(self, path, *args)`` que decodificam um arquivo.

    Usa ``self._cache_manager``; sem gerenciador o método roda sem cache.

    Usage:
        @cached(timeout_seconds=600, key_prefix='png')
        def read(self, path, mode):
            ...
    """
    def decorator(func: Callable) -> Callable:
        @wraps(func)
        def wrapper(self, path, *args):
            manager: Optional[CacheManager] = getattr(self, '_cache_manager', None)
            if manager is None:
                return func(self, path, *args)
            key = file_key(key_prefix or func.__name__, path, *args)
            value = manager.get(key)
            if value is not None:
                return value
            value = func(self, path, *args)
            manager.set(key, value, timeout_seconds)
            return value

        return wrapper
    return decorator
