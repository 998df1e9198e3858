"""
Operadores periódicos D*A(x)D + V(x) sobre la red entera y sus fibras L(k).

Los coeficientes se guardan como polinomios trigonométricos (datos de Fourier
finitos) en la base e^{2πi n·x}. Las fibras se ensamblan en la base de ondas
planas m ∈ ℤ^d con ‖m - centro‖_∞ ≤ N, enumerada en orden lexicográfico.
"""
import hashlib
import itertools
import json
import logging
import threading
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg

from src.exceptions import ConvergenceError, EigenSolverError, OperatorError

logger = logging.getLogger(__name__)

Index = Tuple[int, ...]

# Configuración de validación de coeficientes
COEFFICIENT_CONFIG = {
    "symmetry_tol": 1e-12,
    "reality_tol": 1e-12,
    "ellipticity_grid": 16,
}

# Configuración del lazo de convergencia del corte
CUTOFF_CONFIG = {
    "tol": 1e-9,
    "start": 2,
    "max": 12,
}


def _as_index(key: Sequence[int], dimension: int) -> Index:
    index = tuple(int(v) for v in np.atleast_1d(key))
    if len(index) != dimension:
        raise OperatorError(f"Índice {list(index)} no tiene dimensión {dimension}")
    return index


@dataclass(frozen=True)
class PeriodicOperator:
    """
    Operador elíptico periódico descrito por sus coeficientes de Fourier.

    metric_coeffs: n -> Â_n (matriz d×d compleja)
    potential_coeffs: n -> V̂_n (escalar complejo)
    """
    dimension: int
    metric_coeffs: Dict[Index, np.ndarray]
    potential_coeffs: Dict[Index, complex] = field(default_factory=dict)
    ellipticity_floor: float = 1e-2
    name: str = "operator"
    validate_on_init: bool = field(default=True, compare=False, repr=False)

    def __post_init__(self):
        d = int(self.dimension)
        if d not in (1, 2, 3):
            raise OperatorError(f"Dimensión {self.dimension} no soportada (1, 2 o 3)")
        metric: Dict[Index, np.ndarray] = {}
        for key, value in self.metric_coeffs.items():
            matrix = np.array(value, dtype=complex).reshape(-1)
            if matrix.size != d * d:
                raise OperatorError(f"Coeficiente métrico {key} no es {d}x{d}")
            metric[_as_index(key, d)] = matrix.reshape(d, d)
        potential = {_as_index(key, d): complex(value)
                     for key, value in self.potential_coeffs.items()}
        object.__setattr__(self, "dimension", d)
        object.__setattr__(self, "metric_coeffs", metric)
        object.__setattr__(self, "potential_coeffs", potential)
        object.__setattr__(self, "validated", False)
        if not metric:
            raise OperatorError("El operador necesita al menos el coeficiente métrico Â_0")
        if self.validate_on_init:
            self.validate()
            object.__setattr__(self, "validated", True)

    def symmetry_defect(self) -> float:
        """Máximo incumplimiento de Â_{-n} = conj(Â_n), Â^{pq} = Â^{qp} y V̂_{-n} = conj(V̂_n)"""
        zero_matrix = np.zeros((self.dimension, self.dimension), dtype=complex)
        defect = 0.0
        for n, a in self.metric_coeffs.items():
            partner = self.metric_coeffs.get(tuple(-v for v in n), zero_matrix)
            defect = max(defect, float(np.max(np.abs(partner - np.conj(a)))))
            defect = max(defect, float(np.max(np.abs(a - a.T))))
        for n, v in self.potential_coeffs.items():
            partner = self.potential_coeffs.get(tuple(-x for x in n), 0.0)
            defect = max(defect, abs(partner - np.conj(v)))
        return defect

    def validate(self):
        defect = self.symmetry_defect()
        if defect > COEFFICIENT_CONFIG["symmetry_tol"]:
            raise OperatorError(f"Coeficientes no reales/simétricos: defecto {defect:.3e}")
        if self.ellipticity_floor <= 0:
            raise OperatorError("ellipticity_floor debe ser positivo")
        theta = sample_ellipticity(self)
        if theta < self.ellipticity_floor:
            raise OperatorError(
                f"Elipticidad muestreada {theta:.6g} por debajo del piso {self.ellipticity_floor}"
            )

    @property
    def has_constant_coefficients(self) -> bool:
        zero = (0,) * self.dimension
        metric = all(n == zero or np.max(np.abs(a)) == 0 for n, a in self.metric_coeffs.items())
        return metric and all(n == zero or v == 0 for n, v in self.potential_coeffs.items())

    @property
    def max_frequency(self) -> int:
        keys = list(self.metric_coeffs) + list(self.potential_coeffs)
        return max(max(abs(v) for v in key) for key in keys)

    @cached_property
    def content_hash(self) -> str:
        return operator_hash(self)


@dataclass(frozen=True)
class FourierIndexSet:
    """Índices m con ‖m - centro‖_∞ ≤ N en orden lexicográfico; tamaño (2N+1)^d"""
    cutoff: int
    dimension: int
    center: Optional[Index] = None

    def __post_init__(self):
        if self.cutoff < 0:
            raise OperatorError(f"Corte negativo: {self.cutoff}")
        center = (0,) * self.dimension if self.center is None else tuple(int(c) for c in self.center)
        if len(center) != self.dimension:
            raise OperatorError("Centro de la base con dimensión incorrecta")
        object.__setattr__(self, "center", center)

    @cached_property
    def indices(self) -> np.ndarray:
        axes = [range(c - self.cutoff, c + self.cutoff + 1) for c in self.center]
        return np.array(list(itertools.product(*axes)), dtype=int).reshape(-1, self.dimension)

    @property
    def size(self) -> int:
        return (2 * self.cutoff + 1) ** self.dimension

    def shifted(self, offset: Sequence[int]) -> "FourierIndexSet":
        center = tuple(c + int(o) for c, o in zip(self.center, offset))
        return FourierIndexSet(self.cutoff, self.dimension, center)

    def position(self, index: Sequence[int]) -> int:
        """Posición de un índice dentro de la enumeración"""
        local = np.asarray(index, dtype=int) - np.asarray(self.center) + self.cutoff
        if np.any(local < 0) or np.any(local > 2 * self.cutoff):
            raise OperatorError(f"Índice {list(index)} fuera de la base")
        return int(np.ravel_multi_index(tuple(local), (2 * self.cutoff + 1,) * self.dimension))


@dataclass
class FiberMatrix:
    k: np.ndarray
    basis: FourierIndexSet
    entries: np.ndarray


class FiberAssembler:
    """
    Ensambla M(k) = M0 + Σ_p k_p M1_p + Σ_pq k_p k_q M2_pq.

    La descomposición polinómica en k permite ensamblar lotes de cuasimomentos
    y derivar M respecto a k sin reconstruir la tabla de diferencias.
    """

    def __init__(self, op: PeriodicOperator, basis: FourierIndexSet):
        if basis.dimension != op.dimension:
            raise OperatorError(
                f"Base de dimensión {basis.dimension} para operador de dimensión {op.dimension}"
            )
        self.op = op
        self.basis = basis
        d = op.dimension
        m = basis.indices
        n = m.shape[0]
        span = 2 * basis.cutoff
        dims = (2 * span + 1,) * d

        metric_table = np.zeros((int(np.prod(dims)), d, d), dtype=complex)
        potential_table = np.zeros(int(np.prod(dims)), dtype=complex)
        for key, a in op.metric_coeffs.items():
            if max(abs(v) for v in key) <= span:
                metric_table[np.ravel_multi_index(tuple(v + span for v in key), dims)] = a
        for key, v in op.potential_coeffs.items():
            if max(abs(x) for x in key) <= span:
                potential_table[np.ravel_multi_index(tuple(x + span for x in key), dims)] = v

        diff = m[:, None, :] - m[None, :, :] + span
        flat = np.ravel_multi_index(tuple(diff[..., p] for p in range(d)), dims)
        a_blocks = metric_table[flat]
        v_block = potential_table[flat]

        g = 2.0 * np.pi * m.astype(float)
        m0 = np.einsum("ip,ijpq,jq->ij", g, a_blocks, g) + v_block
        m1 = np.einsum("ijpq,jq->pij", a_blocks, g) + np.einsum("iq,ijqp->pij", g, a_blocks)
        m2 = np.ascontiguousarray(np.moveaxis(a_blocks, (2, 3), (0, 1)))

        if op.validated:
            # simetrización exacta; los operadores sin validar conservan su defecto
            m0 = 0.5 * (m0 + m0.conj().T)
            m1 = 0.5 * (m1 + np.conj(np.swapaxes(m1, 1, 2)))
            m2 = 0.5 * (m2 + np.conj(np.swapaxes(m2, 2, 3)))

        self.size = n
        self.m0 = m0
        self.m1 = m1
        self.m2 = m2
        self._m1_flat = m1.reshape(d, n * n)
        self._m2_flat = m2.reshape(d * d, n * n)
        self._m2_sym = m2 + np.swapaxes(m2, 0, 1)

    def _check_k(self, k) -> np.ndarray:
        k = np.asarray(k, dtype=complex).reshape(-1)
        if k.shape[0] != self.op.dimension:
            raise OperatorError(
                f"Cuasimomento de dimensión {k.shape[0]} para operador de dimensión {self.op.dimension}"
            )
        return k

    def matrix(self, k) -> np.ndarray:
        k = self._check_k(k)
        return self.batch(k[None, :])[0]

    def batch(self, ks) -> np.ndarray:
        ks = np.asarray(ks, dtype=complex)
        if ks.ndim != 2 or ks.shape[1] != self.op.dimension:
            raise OperatorError(f"Lote de cuasimomentos con forma {ks.shape} inválida")
        b, d, n = ks.shape[0], self.op.dimension, self.size
        kk = (ks[:, :, None] * ks[:, None, :]).reshape(b, d * d)
        linear = ks @ self._m1_flat
        quadratic = kk @ self._m2_flat
        return self.m0[None, :, :] + (linear + quadratic).reshape(b, n, n)

    def derivatives(self, k) -> np.ndarray:
        """∂M/∂k_p para p = 1..d, forma (d, n, n)"""
        k = self._check_k(k)
        return self.m1 + np.einsum("q,pqij->pij", k, self._m2_sym)


_ASSEMBLERS: Dict[Tuple[str, FourierIndexSet], FiberAssembler] = {}
_ASSEMBLER_LOCK = threading.Lock()


def get_assembler(op: PeriodicOperator, basis: FourierIndexSet) -> FiberAssembler:
    """Ensamblador compartido por (hash del operador, base)"""
    key = (op.content_hash + ("" if op.validated else ":raw"), basis)
    with _ASSEMBLER_LOCK:
        assembler = _ASSEMBLERS.get(key)
        if assembler is None:
            if len(_ASSEMBLERS) > 32:
                _ASSEMBLERS.clear()
            assembler = FiberAssembler(op, basis)
            _ASSEMBLERS[key] = assembler
    return assembler


def assemble_fiber(op: PeriodicOperator, k, basis: FourierIndexSet) -> FiberMatrix:
    """
    Ensambla la matriz de Galerkin de L(k) = (D+k)*A(x)(D+k) + V(x).

    Args:
        op: operador periódico
        k: cuasimomento (real o complejo) de dimensión op.dimension
        basis: conjunto de índices de Fourier

    Returns:
        FiberMatrix con M(k)_{m,m'} = Σ_pq (2πm_p+k_p) Â^{pq}_{m-m'} (2πm'_q+k_q) + V̂_{m-m'}
    """
    assembler = get_assembler(op, basis)
    k = assembler._check_k(k)
    return FiberMatrix(k=k, basis=basis, entries=assembler.matrix(k))


def fiber_derivatives(op: PeriodicOperator, k, basis: FourierIndexSet) -> np.ndarray:
    return get_assembler(op, basis).derivatives(k)


def assemble_fiber_batch(op: PeriodicOperator, ks, basis: FourierIndexSet) -> np.ndarray:
    return get_assembler(op, basis).batch(ks)


def hermiticity_residual(op: PeriodicOperator, k, basis: FourierIndexSet) -> float:
    """max |M(k)^H - M(conj k)|; cero salvo redondeo para coeficientes reales simétricos"""
    assembler = get_assembler(op, basis)
    k = assembler._check_k(k)
    forward = assembler.matrix(k)
    mirrored = assembler.matrix(np.conj(k))
    return float(np.max(np.abs(forward.conj().T - mirrored)))


def evaluate_coefficients(op: PeriodicOperator, x) -> Tuple[np.ndarray, float]:
    """
    Suma de Fourier de A y V en un punto x de la celda unidad.

    Raises:
        OperatorError: si la parte imaginaria supera la tolerancia (coeficientes corruptos)
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.shape[0] != op.dimension:
        raise OperatorError(f"Punto de dimensión {x.shape[0]} para operador de dimensión {op.dimension}")
    a = np.zeros((op.dimension, op.dimension), dtype=complex)
    for n, coeff in op.metric_coeffs.items():
        a = a + coeff * np.exp(2j * np.pi * np.dot(n, x))
    v = 0.0 + 0.0j
    for n, coeff in op.potential_coeffs.items():
        v += coeff * np.exp(2j * np.pi * np.dot(n, x))
    tol = COEFFICIENT_CONFIG["reality_tol"]
    if np.max(np.abs(a.imag)) > tol * (1.0 + np.max(np.abs(a.real))) or abs(v.imag) > tol * (1.0 + abs(v.real)):
        raise OperatorError(f"Coeficientes no reales en x={x.tolist()}: posible corrupción")
    return a.real, float(v.real)


def sample_ellipticity(op: PeriodicOperator, resolution: Optional[int] = None) -> float:
    """Mínimo muestreado del menor valor propio de A(x) en una malla fija"""
    resolution = resolution or COEFFICIENT_CONFIG["ellipticity_grid"]
    axis = np.arange(resolution) / resolution
    points = np.array(list(itertools.product(axis, repeat=op.dimension)))
    keys = list(op.metric_coeffs)
    coeffs = np.array([op.metric_coeffs[key] for key in keys])
    phases = np.exp(2j * np.pi * points @ np.array(keys, dtype=float).T)
    a_values = np.einsum("xk,kpq->xpq", phases, coeffs).real
    a_values = 0.5 * (a_values + np.swapaxes(a_values, 1, 2))
    return float(np.min(np.linalg.eigvalsh(a_values)))


def operator_to_dict(op: PeriodicOperator) -> Dict[str, Any]:
    """Descripción JSON canónica del operador (índices ordenados, complejos como [re, im])"""
    def number(value: complex):
        value = complex(value)
        return value.real if value.imag == 0 else [value.real, value.imag]

    return {
        "name": op.name,
        "dimension": op.dimension,
        "metric": [
            {"index": list(n), "matrix": [[number(v) for v in row] for row in op.metric_coeffs[n]]}
            for n in sorted(op.metric_coeffs)
        ],
        "potential": [
            {"index": list(n), "value": number(op.potential_coeffs[n])}
            for n in sorted(op.potential_coeffs)
        ],
        "ellipticity_floor": op.ellipticity_floor,
    }


def operator_from_dict(data: Dict[str, Any], validate: bool = True) -> PeriodicOperator:
    """Construye el operador desde la descripción JSON (ver cli_config para el esquema)"""
    def number(value) -> complex:
        if isinstance(value, (list, tuple)):
            if len(value) != 2:
                raise OperatorError(f"Complejo mal formado: {value}")
            return complex(float(value[0]), float(value[1]))
        return complex(float(value))

    try:
        d = int(data["dimension"])
        metric = {
            tuple(entry["index"]): np.array([[number(v) for v in row] for row in entry["matrix"]])
            for entry in data.get("metric", [])
        }
        potential = {tuple(entry["index"]): number(entry["value"]) for entry in data.get("potential", [])}
    except (KeyError, TypeError, ValueError) as e:
        raise OperatorError(f"Descripción de operador inválida: {e}") from e
    return PeriodicOperator(
        dimension=d,
        metric_coeffs=metric,
        potential_coeffs=potential,
        ellipticity_floor=float(data.get("ellipticity_floor", 1e-2)),
        name=str(data.get("name", "operator")),
        validate_on_init=validate,
    )


def operator_hash(op: PeriodicOperator) -> str:
    payload = json.dumps(operator_to_dict(op), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def free_operator(dimension: int) -> PeriodicOperator:
    """-Δ en ℝ^d: A = I, V = 0"""
    return PeriodicOperator(
        dimension=dimension,
        metric_coeffs={(0,) * dimension: np.eye(dimension)},
        ellipticity_floor=0.5,
        name=f"free_{dimension}d",
    )


def separable_cosine_operator(amplitudes: Sequence[float], name: Optional[str] = None) -> PeriodicOperator:
    """-Δ + Σ_p 2 q_p cos(2π x_p), es decir V̂_{±e_p} = q_p"""
    d = len(amplitudes)
    potential: Dict[Index, complex] = {}
    for p, q in enumerate(amplitudes):
        if q == 0:
            continue
        unit = [0] * d
        unit[p] = 1
        potential[tuple(unit)] = q
        unit[p] = -1
        potential[tuple(unit)] = q
    return PeriodicOperator(
        dimension=d,
        metric_coeffs={(0,) * d: np.eye(d)},
        potential_coeffs=potential,
        ellipticity_floor=0.5,
        name=name or f"cosine_{d}d",
    )


def mathieu_operator(dimension: int, q: float) -> PeriodicOperator:
    """Mathieu separable: V(x) = 2q Σ_p cos(2π x_p)"""
    return separable_cosine_operator([q] * dimension, name=f"mathieu_{dimension}d_q{q:g}")


def lowest_eigenvalues(op: PeriodicOperator, k, basis: FourierIndexSet, count: int) -> np.ndarray:
    """Primeros `count` valores propios de M(k) para k real"""
    matrix = assemble_fiber(op, k, basis).entries
    try:
        values = scipy.linalg.eigh(matrix, eigvals_only=True, subset_by_index=[0, min(count, basis.size) - 1])
    except (np.linalg.LinAlgError, ValueError) as e:
        raise EigenSolverError(f"Fallo del solver hermítico en k={np.real(k).tolist()}: {e}", k) from e
    return values


def converge_cutoff(op: PeriodicOperator, k, band: int, tol: Optional[float] = None,
                    start: Optional[int] = None, n_max: Optional[int] = None) -> int:
    """
    Menor corte N tal que el valor propio `band` (1-indexado) se mueve menos de tol al pasar a N+1.
    """
    tol = CUTOFF_CONFIG["tol"] if tol is None else tol
    cutoff = CUTOFF_CONFIG["start"] if start is None else start
    n_max = CUTOFF_CONFIG["max"] if n_max is None else n_max
    k = np.asarray(k, dtype=float).reshape(-1)
    previous = lowest_eigenvalues(op, k, FourierIndexSet(cutoff, op.dimension), band)[band - 1]
    while cutoff < n_max:
        current = lowest_eigenvalues(op, k, FourierIndexSet(cutoff + 1, op.dimension), band)[band - 1]
        logger.debug(f"Corte N={cutoff + 1}: λ_{band} = {current:.15g} (Δ = {abs(current - previous):.3e})")
        if abs(current - previous) < tol:
            logger.info(f"Corte convergido N={cutoff} para banda {band} (tol {tol:g})")
            return cutoff
        previous = current
        cutoff += 1
    raise ConvergenceError(f"El corte no convergió hasta N={n_max} para la banda {band}")
