"""
Caché de resultados direccionado por contenido.

Clave: sha256 del JSON canónico (operador + parámetros numéricos). Los arreglos
van a .npz y los metadatos a .json; la escritura pasa por un archivo temporal
y os.replace, así que un lector nunca ve un archivo a medias.
"""
import hashlib
import json
import logging
import os
import tempfile
from typing import Any, Dict, Optional, Tuple

import numpy as np

from src.exceptions import CacheError

logger = logging.getLogger(__name__)


def _stable_dumps(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False, default=_jsonable)


def _jsonable(value: Any) -> Any:
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    if isinstance(value, complex):
        return [value.real, value.imag]
    raise TypeError(f"Tipo no serializable en clave de caché: {type(value).__name__}")


def cache_key(kind: str, payload: Dict[str, Any]) -> str:
    return hashlib.sha256(_stable_dumps({"kind": kind, "payload": payload}).encode("utf-8")).hexdigest()


class ResultCache:
    """Lecturas sin bloqueo; escrituras atómicas por renombrado"""

    def __init__(self, directory: str, enabled: bool = True):
        self.directory = directory
        self.enabled = enabled
        if enabled:
            os.makedirs(directory, exist_ok=True)

    def _paths(self, key: str) -> Tuple[str, str]:
        base = os.path.join(self.directory, key[:2], key)
        return base + ".npz", base + ".json"

    def _atomic_write(self, path: str, writer):
        os.makedirs(os.path.dirname(path), exist_ok=True)
        handle, temporary = tempfile.mkstemp(dir=os.path.dirname(path), suffix=".tmp")
        try:
            with os.fdopen(handle, "wb") as f:
                writer(f)
            os.replace(temporary, path)
        except Exception as e:
            if os.path.exists(temporary):
                os.remove(temporary)
            raise CacheError(f"Error escribiendo {path}: {e}") from e

    def save(self, key: str, arrays: Dict[str, np.ndarray], metadata: Optional[Dict[str, Any]] = None):
        if not self.enabled:
            return
        array_path, meta_path = self._paths(key)
        self._atomic_write(array_path, lambda f: np.savez(f, **arrays))
        body = _stable_dumps(metadata or {}).encode("utf-8")
        self._atomic_write(meta_path, lambda f: f.write(body))
        logger.debug(f"Caché guardado: {key[:12]}")

    def load(self, key: str) -> Optional[Tuple[Dict[str, np.ndarray], Dict[str, Any]]]:
        if not self.enabled:
            return None
        array_path, meta_path = self._paths(key)
        if not (os.path.exists(array_path) and os.path.exists(meta_path)):
            return None
        try:
            with np.load(array_path, allow_pickle=False) as data:
                arrays = {name: data[name] for name in data.files}
            with open(meta_path, "r", encoding="utf-8") as f:
                metadata = json.load(f)
        except Exception as e:
            logger.warning(f"Entrada de caché ilegible {key[:12]}: {e}")
            return None
        logger.debug(f"Caché encontrado: {key[:12]}")
        return arrays, metadata
