"""
Oráculo de fuerza bruta para G_λ(x, y): cuadratura en la zona de Brillouin del
núcleo de la resolvente de cada fibra, con variante de contorno desplazado
k → k + iτ y referencias cerradas del operador libre.
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
import scipy.special

from src.exceptions import ConvergenceError, EigenSolverError, GeometryError, NotInGapError, OperatorError
from src.operator_model import FourierIndexSet, PeriodicOperator, evaluate_coefficients, get_assembler

logger = logging.getLogger(__name__)

# Configuración del oráculo
ORACLE_CONFIG = {
    "min_separation": 0.5,
    "nodes_per_unit": 8,
    "tol_quad": 1e-6,
    "max_doublings": 2,
    "gap_check_grid": 32,
    "batch_size": 64,
    "reference_correction": True,
    "singular_floor": 1e-12,
    "threads": 1,
}


@dataclass
class OracleSample:
    x: np.ndarray
    y: np.ndarray
    lam: float
    value: complex
    grid: int
    contour_shift: np.ndarray
    converged: bool = False
    cutoff: int = 0

    @property
    def r(self) -> float:
        return float(np.linalg.norm(self.x - self.y))

    def to_row(self) -> Dict[str, float]:
        row: Dict[str, float] = {}
        for p, value in enumerate(self.x):
            row[f"x{p + 1}"] = float(value)
        for p, value in enumerate(self.y):
            row[f"y{p + 1}"] = float(value)
        row.update({"r": self.r, "lambda": self.lam, "re_G": self.value.real, "im_G": self.value.imag,
                    "grid": self.grid, "converged": self.converged})
        return row


def free_reference(lam: float, r: float, d: int) -> float:
    """Funciones de Green libres de -Δ - λ con λ < 0 en d = 1, 2, 3"""
    if lam >= 0 or r <= 0:
        raise ValueError("free_reference requiere λ < 0 y r > 0")
    q = math.sqrt(-lam)
    if d == 1:
        return math.exp(-q * r) / (2.0 * q)
    if d == 2:
        return float(scipy.special.k0(q * r)) / (2.0 * np.pi)
    if d == 3:
        return math.exp(-q * r) / (4.0 * np.pi * r)
    raise ValueError(f"Dimensión {d} no soportada (1, 2 o 3)")


def reference_green(metric: np.ndarray, mass: float, rho: np.ndarray) -> float:
    """Green exacta de -∇·A∇ + c con A constante, evaluada en ρ = x - y"""
    d = metric.shape[0]
    det = float(np.linalg.det(metric))
    distance = float(np.sqrt(rho @ np.linalg.solve(metric, rho)))
    q = math.sqrt(mass)
    if d == 1:
        return math.exp(-q * distance) / (2.0 * math.sqrt(mass * det))
    if d == 2:
        return float(scipy.special.k0(q * distance)) / (2.0 * np.pi * math.sqrt(det))
    if d == 3:
        return math.exp(-q * distance) / (4.0 * np.pi * math.sqrt(det) * distance)
    raise ValueError(f"Dimensión {d} no soportada (1, 2 o 3)")


def bz_nodes(grid: int, dimension: int) -> np.ndarray:
    """Nodos de punto medio k = -π + 2π(j+½)/M en cada eje"""
    axis = -np.pi + 2.0 * np.pi * (np.arange(grid) + 0.5) / grid
    mesh = np.meshgrid(*([axis] * dimension), indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def plane_waves(indices: np.ndarray, point: np.ndarray) -> np.ndarray:
    fractional = point - np.floor(point)
    return np.exp(2j * np.pi * indices @ fractional)


def check_in_gap(op: PeriodicOperator, lam: float, cutoff: int, grid: Optional[int] = None):
    """
    Falla si λ cae entre el mínimo y el máximo de alguna banda en una malla gruesa.
    """
    grid = grid or ORACLE_CONFIG["gap_check_grid"]
    basis = FourierIndexSet(cutoff, op.dimension)
    assembler = get_assembler(op, basis)
    nodes = bz_nodes(grid, op.dimension)
    try:
        values = np.linalg.eigvalsh(assembler.batch(nodes))
    except np.linalg.LinAlgError as e:
        raise EigenSolverError(f"Fallo del solver hermítico en el chequeo de gap: {e}") from e
    low, high = values.min(axis=0), values.max(axis=0)
    inside = np.flatnonzero((low <= lam) & (lam <= high))
    if inside.size:
        distances = np.abs(values - lam).min(axis=1)
        node = int(np.argmin(distances))
        raise NotInGapError(f"λ={lam} dentro de la banda {int(inside[0]) + 1}", nodes[node], float(distances[node]))


def _reference_data(op: PeriodicOperator, lam: float, y: np.ndarray, shift: np.ndarray):
    metric, potential = evaluate_coefficients(op, y - np.floor(y))
    metric = 0.5 * (metric + metric.T)
    mass = potential - lam
    if mass <= 0:
        logger.warning(f"c = V(ȳ) - λ = {mass:.3g} ≤ 0: se usa c = 1 en la referencia")
        mass = 1.0
    if float(shift @ metric @ shift) >= mass:
        raise GeometryError(f"Desplazamiento τ={shift.tolist()} fuera del dominio de la referencia (τ·Aτ ≥ c)")
    return metric, mass


def _weakest_node(matrices: np.ndarray, batch: np.ndarray):
    """Nodo del lote con el menor valor singular de M(k) - λ, ese valor y su cociente con el mayor"""
    sigma = np.linalg.svd(matrices, compute_uv=False)
    j = int(np.argmin(sigma[:, -1]))
    return batch[j], float(sigma[j, -1]), float(sigma[j, -1] / sigma[j, 0])


def _bz_sum(op: PeriodicOperator, lam: float, xs: np.ndarray, y: np.ndarray, cutoff: int, grid: int,
            shift: np.ndarray, config: Dict[str, Any]) -> np.ndarray:
    d = op.dimension
    basis = FourierIndexSet(cutoff, d)
    assembler = get_assembler(op, basis)
    indices = basis.indices
    wave = 2.0 * np.pi * indices.astype(float)
    rhs = np.conj(plane_waves(indices, y))
    left = np.array([plane_waves(indices, x) for x in xs])
    separations = xs - y[None, :]
    nodes = bz_nodes(grid, d)
    identity = np.eye(basis.size)

    correction = config["reference_correction"]
    if correction:
        metric, mass = _reference_data(op, lam, y, shift)

    on_contour = bool(np.any(shift))

    def partial(batch: np.ndarray) -> np.ndarray:
        ks = batch + 1j * shift[None, :]
        matrices = assembler.batch(ks) - lam * identity[None, :, :]
        if on_contour:
            node, smallest, ratio = _weakest_node(matrices, batch)
            if ratio < config["singular_floor"]:
                raise NotInGapError(f"Fibra casi singular en k={node.tolist()} + i·{shift.tolist()}: "
                                    f"σ_min(M - λ) = {smallest:.3e}", node, smallest)
        try:
            solution = np.linalg.solve(matrices, np.broadcast_to(rhs, (len(batch), basis.size))[..., None])[..., 0]
        except np.linalg.LinAlgError as e:
            try:
                node, smallest, _ = _weakest_node(matrices, batch)
            except np.linalg.LinAlgError:
                raise EigenSolverError(f"Fibra singular en el lote que empieza en k={batch[0].tolist()}: {e}",
                                       batch[0]) from e
            raise NotInGapError(f"Fibra singular en k={node.tolist()} + i·{shift.tolist()}: "
                                f"σ_min(M - λ) = {smallest:.3e}", node, smallest) from e
        if correction:
            shifted = ks[:, None, :] + wave[None, :, :]
            symbol = np.einsum("bmp,pq,bmq->bm", shifted, metric, shifted) + mass
            solution = solution - rhs[None, :] / symbol
        phases = np.exp(1j * batch @ separations.T)
        return np.einsum("bx,xm,bm->x", phases, left, solution)

    size = config["batch_size"]
    batches = [nodes[i:i + size] for i in range(0, len(nodes), size)]
    with ThreadPoolExecutor(max_workers=max(1, config["threads"])) as executor:
        partials = list(executor.map(partial, batches))
    total = np.sum(np.array(partials), axis=0) / grid ** d
    total = total * np.exp(-separations @ shift)
    if correction:
        total = total + np.array([reference_green(metric, mass, rho) for rho in separations])
    return total


def _prepare(op: PeriodicOperator, lam: float, xs, y, grid: Optional[int], config: Dict[str, Any]):
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    y = np.asarray(y, dtype=float).reshape(op.dimension)
    if xs.shape[1] != op.dimension:
        raise GeometryError(f"Puntos de dimensión {xs.shape[1]} para operador de dimensión {op.dimension}")
    separations = np.linalg.norm(xs - y[None, :], axis=1)
    if np.min(separations) < config["min_separation"]:
        raise GeometryError(f"|x-y| = {np.min(separations):.3g} < {config['min_separation']}: núcleo singular")
    floor = config["nodes_per_unit"] * int(math.ceil(np.max(separations)))
    if grid is None:
        grid = floor
    elif grid < floor:
        raise ValueError(f"M={grid} por debajo del mínimo {floor} = 8·⌈|x-y|⌉")
    return xs, y, grid


def green_oracle_batch(op: PeriodicOperator, lam: float, xs, y, cutoff: int, grid: Optional[int] = None,
                       shift=None, config: Optional[Dict[str, Any]] = None) -> List[OracleSample]:
    """Una pasada por la zona de Brillouin para todos los x con el mismo y"""
    config = {**ORACLE_CONFIG, **(config or {})}
    xs, y, grid = _prepare(op, lam, xs, y, grid, config)
    if config["reference_correction"] and op.has_constant_coefficients:
        logger.debug(f"{op.name}: coeficientes constantes, la suma corregida es la referencia cerrada")
    shift = np.zeros(op.dimension) if shift is None else np.asarray(shift, dtype=float)
    values = _bz_sum(op, lam, xs, y, cutoff, grid, shift, config)
    return [OracleSample(x=x, y=y, lam=float(lam), value=complex(v), grid=grid, contour_shift=shift, cutoff=cutoff)
            for x, v in zip(xs, values)]


def green_converged(op: PeriodicOperator, lam: float, xs, y, cutoff: int, grid: Optional[int] = None,
                    shift=None, config: Optional[Dict[str, Any]] = None,
                    require_convergence: bool = False) -> List[OracleSample]:
    """Duplica M hasta que dos valores consecutivos coinciden dentro de tol_quad"""
    config = {**ORACLE_CONFIG, **(config or {})}
    check_in_gap(op, lam, cutoff, min(config["gap_check_grid"], grid or config["gap_check_grid"]))
    samples = green_oracle_batch(op, lam, xs, y, cutoff, grid, shift, config)
    grid = samples[0].grid
    for _ in range(config["max_doublings"]):
        grid *= 2
        refined = green_oracle_batch(op, lam, xs, y, cutoff, grid, shift, config)
        for old, new in zip(samples, refined):
            new.converged = abs(new.value - old.value) <= config["tol_quad"] * abs(new.value)
        samples = refined
        if all(s.converged for s in samples):
            break
    pending = [s for s in samples if not s.converged]
    if pending:
        message = f"{len(pending)} muestras sin converger con M={grid} (tol_quad={config['tol_quad']:g})"
        if require_convergence:
            raise ConvergenceError(message)
        logger.warning(message)
    logger.info(f"Oráculo λ={lam}: {len(samples)} puntos, M={grid}, corte N={cutoff}")
    return samples


def green_bz_integral(op: PeriodicOperator, lam: float, x, y, cutoff: int, grid: Optional[int] = None,
                      config: Optional[Dict[str, Any]] = None) -> OracleSample:
    config = {**ORACLE_CONFIG, **(config or {})}
    check_in_gap(op, lam, cutoff, config["gap_check_grid"])
    return green_oracle_batch(op, lam, [x], y, cutoff, grid, None, config)[0]


def green_shifted_contour(op: PeriodicOperator, lam: float, beta_s, t: float, x, y, cutoff: int,
                          grid: Optional[int] = None, config: Optional[Dict[str, Any]] = None) -> OracleSample:
    """Misma integral sobre k + i·tβ_s; debe coincidir con green_bz_integral para t < 1"""
    if not 0.0 <= t < 1.0:
        raise ValueError(f"t={t} fuera de [0, 1)")
    shift = t * np.asarray(beta_s, dtype=float)
    return green_oracle_batch(op, lam, [x], y, cutoff, grid, shift, config)[0]


def truncation_study(op: PeriodicOperator, lam: float, x, y, cutoffs: Sequence[int],
                     grids: Sequence[int], config: Optional[Dict[str, Any]] = None) -> pd.DataFrame:
    """
    Suma sin corrección de referencia frente a la Green exacta de un operador de
    coeficientes constantes, para cada combinación de corte N y malla M.

    Con coeficientes constantes la suma corregida coincide con la referencia en
    cualquier malla, así que esta es la comprobación independiente del oráculo.
    """
    if not op.has_constant_coefficients:
        raise OperatorError(f"{op.name}: el estudio de truncación requiere coeficientes constantes")
    config = {**ORACLE_CONFIG, **(config or {}), "reference_correction": False}
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    metric, potential = evaluate_coefficients(op, np.zeros(op.dimension))
    if potential - lam <= 0:
        raise NotInGapError(f"λ={lam} no está por debajo del espectro [{potential:.6g}, ∞)")
    exact = reference_green(0.5 * (metric + metric.T), potential - lam, x - y)
    rows = []
    for cutoff in cutoffs:
        for grid in grids:
            value = green_bz_integral(op, lam, x, y, cutoff, grid, config).value
            rows.append({"cutoff": int(cutoff), "grid": int(grid), "re_G": value.real, "im_G": value.imag,
                         "reference": exact, "rel_error": abs(value - exact) / abs(exact)})
    logger.info(f"Truncación de {op.name} en λ={lam}: error relativo "
                f"{rows[0]['rel_error']:.3e} → {rows[-1]['rel_error']:.3e}")
    return pd.DataFrame(rows)


def resolvent_distance_scan(op: PeriodicOperator, lam: float, beta_s, t_values: Sequence[float], cutoff: int,
                            grid: int = 16) -> pd.DataFrame:
    """
    Distancia mínima de λ al espectro de M(k + i·tβ_s) sobre una malla que contiene
    los puntos de simetría, y el nodo donde se alcanza.
    """
    basis = FourierIndexSet(cutoff, op.dimension)
    assembler = get_assembler(op, basis)
    axis = -np.pi + 2.0 * np.pi * np.arange(grid) / grid
    mesh = np.meshgrid(*([axis] * op.dimension), indexing="ij")
    nodes = np.stack([m.ravel() for m in mesh], axis=1)
    beta_s = np.asarray(beta_s, dtype=float)
    rows = []
    for t in t_values:
        try:
            values = np.linalg.eigvals(assembler.batch(nodes + 1j * t * beta_s[None, :]))
        except np.linalg.LinAlgError as e:
            raise EigenSolverError(f"Fallo de eigvals en t={t}: {e}") from e
        distances = np.abs(values - lam).min(axis=1)
        j = int(np.argmin(distances))
        row = {"t": float(t), "distance": float(distances[j])}
        for p, value in enumerate(nodes[j]):
            row[f"k{p + 1}"] = float(value)
        rows.append(row)
    return pd.DataFrame(rows)


def samples_frame(samples: List[OracleSample]) -> pd.DataFrame:
    return pd.DataFrame([s.to_row() for s in samples])
