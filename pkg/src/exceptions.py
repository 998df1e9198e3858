"""
Jerarquía de errores de gap_green.

El código de librería lanza estas excepciones; el arnés de validación y la CLI
las capturan por etapa y las registran en el reporte.
"""
from typing import Any, Dict, List, Optional

import numpy as np


class GapGreenError(Exception):
    """Error base del paquete"""


class OperatorError(GapGreenError):
    """Coeficientes inválidos, corruptos o dimensión incompatible"""


class EigenSolverError(GapGreenError):
    """Fallo de LAPACK en un cuasimomento concreto"""

    def __init__(self, message: str, k: Optional[np.ndarray] = None):
        super().__init__(message)
        self.k = None if k is None else np.asarray(k)


class BranchTrackingError(GapGreenError):
    """Ambigüedad o pérdida de solapamiento al seguir la rama espectral"""

    def __init__(self, message: str, candidates: Optional[List[complex]] = None,
                 last_good: Optional[Any] = None):
        super().__init__(message)
        self.candidates = list(candidates or [])
        self.last_good = last_good


class RealityDefectError(GapGreenError):
    """El valor propio continuado a iβ tiene parte imaginaria por encima de tol_real"""

    def __init__(self, message: str, defect: float = 0.0):
        super().__init__(message)
        self.defect = defect


class PairingError(GapGreenError):
    """Emparejamiento F = (φ₊, φ₋) numéricamente nulo"""

    def __init__(self, message: str, pairing: complex = 0j):
        super().__init__(message)
        self.pairing = pairing


class ConvergenceError(GapGreenError):
    """Newton, refinamiento o cuadratura sin convergencia"""

    def __init__(self, message: str, residual: Optional[float] = None):
        super().__init__(message)
        self.residual = residual


class GeometryError(GapGreenError):
    """Punto soporte en rama equivocada o fuera de la región de concavidad"""


class NotInGapError(GapGreenError):
    """La energía toca el espectro de alguna fibra"""

    def __init__(self, message: str, node: Optional[np.ndarray] = None,
                 distance: Optional[float] = None):
        super().__init__(message)
        self.node = None if node is None else np.asarray(node)
        self.distance = distance


class ConfigError(GapGreenError):
    """Error de parseo o validación de configuración"""

    def __init__(self, message: str, field: Optional[str] = None,
                 line: Optional[int] = None, column: Optional[int] = None):
        super().__init__(message)
        self.field = field
        self.line = line
        self.column = column

    def as_dict(self) -> Dict[str, Any]:
        return {"message": str(self), "field": self.field,
                "line": self.line, "column": self.column}


class FitError(GapGreenError):
    """Diseño degenerado en un ajuste por mínimos cuadrados"""


class CacheError(GapGreenError):
    """Lectura o escritura fallida en el caché de resultados"""
