"""
Funciones de banda λ_j(k), gaps espectrales, bordes de gap k₀ y verificación
de las hipótesis de no degeneración (A1-A5).

Convención de orientación: un borde es el mínimo de la banda j+1 (gap debajo,
orientation=+1) o el máximo de la banda j (gap encima, orientation=-1). Todo el
trabajo posterior usa la banda normalizada λ̃ = orientation·(λ_j - edge_energy),
cuyo borde es un mínimo no degenerado en 0.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import scipy.linalg
import scipy.optimize

from src.exceptions import ConvergenceError, EigenSolverError, GapGreenError
from src.operator_model import FiberAssembler, FourierIndexSet, PeriodicOperator, get_assembler

logger = logging.getLogger(__name__)

# Configuración de la malla de bandas
BAND_CONFIG = {
    "grid_resolution": 33,
    "n_bands": 4,
    "batch_size": 256,
    "gap_tol": 1e-8,
}

# Configuración del refinamiento de bordes
EDGE_CONFIG = {
    "n_starts": 4,
    "gtol": 1e-10,
    "max_iter": 200,
    "hessian_step": 1e-3,
    "newton_polish": 4,
    "accept_gradient": 1e-7,
}

# Tolerancias de las hipótesis A1-A5
ASSUMPTION_TOLERANCES = {
    "tol_edge": 1e-9,
    "tol_margin": 1e-6,
    "tol_cluster": 0.05,
    "cluster_radius": np.pi / 2,
    "tol_pd": 1e-6,
    "tol_sym": 1e-6,
}


@dataclass
class BandGrid:
    axis: np.ndarray
    points: np.ndarray
    values: np.ndarray
    cutoff: int
    dimension: int

    @property
    def n_bands(self) -> int:
        return self.values.shape[1]

    @property
    def resolution(self) -> int:
        return self.axis.shape[0]

    @property
    def spacing(self) -> float:
        return float(self.axis[1] - self.axis[0])

    def band(self, j: int) -> np.ndarray:
        """Valores de la banda j (1-indexada) en la malla"""
        return self.values[:, j - 1]

    def to_frame(self) -> pd.DataFrame:
        data: Dict[str, np.ndarray] = {}
        for p in range(self.dimension):
            data[f"k{p + 1}"] = self.points[:, p]
        for j in range(self.n_bands):
            data[f"lambda{j + 1}"] = self.values[:, j]
        return pd.DataFrame(data)


@dataclass
class SpectralGap:
    below_band: int
    interval: Tuple[float, float]
    certified_on_grid: bool = True

    @property
    def width(self) -> float:
        return float(self.interval[1] - self.interval[0])

    def contains(self, energy: float) -> bool:
        return self.interval[0] < energy < self.interval[1]

    def to_dict(self) -> Dict[str, Any]:
        return {"below_band": self.below_band, "interval": list(self.interval),
                "certified_on_grid": self.certified_on_grid}


@dataclass
class BandEdge:
    band_index: int
    side: str
    orientation: int
    k0: np.ndarray
    edge_energy: float
    hessian: np.ndarray
    shift_applied: float
    epsilon0: float
    cutoff: int
    k0_raw: np.ndarray = field(default_factory=lambda: np.zeros(0))
    snap_distance: float = 0.0
    gap: Optional[SpectralGap] = None

    @property
    def dimension(self) -> int:
        return self.k0.shape[0]

    def physical_energy(self, working: float) -> float:
        """λ físico a partir de la energía de trabajo λ̃"""
        return self.edge_energy + self.orientation * working

    def working_energy(self, physical: float) -> float:
        return self.orientation * (physical - self.edge_energy)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "band_index": self.band_index,
            "side": self.side,
            "orientation": self.orientation,
            "k0": self.k0.tolist(),
            "k0_raw": self.k0_raw.tolist(),
            "snap_distance": self.snap_distance,
            "edge_energy": self.edge_energy,
            "hessian": self.hessian.tolist(),
            "shift_applied": self.shift_applied,
            "epsilon0": self.epsilon0,
            "cutoff": self.cutoff,
            "gap": None if self.gap is None else self.gap.to_dict(),
        }


@dataclass
class AssumptionCheck:
    name: str
    passed: bool
    measured: float
    threshold: float
    detail: str = ""

    def to_dict(self) -> Dict[str, Any]:
        return {"passed": bool(self.passed), "measured": float(self.measured),
                "threshold": float(self.threshold), "detail": self.detail}


@dataclass
class AssumptionReport:
    a1: AssumptionCheck
    a2: AssumptionCheck
    a3: AssumptionCheck
    a4: AssumptionCheck
    a5: AssumptionCheck

    @property
    def checks(self) -> List[AssumptionCheck]:
        return [self.a1, self.a2, self.a3, self.a4, self.a5]

    @property
    def overall(self) -> bool:
        return all(check.passed for check in self.checks)

    def failures(self) -> List[str]:
        return [check.name for check in self.checks if not check.passed]

    def to_dict(self) -> Dict[str, Any]:
        report = {check.name: check.to_dict() for check in self.checks}
        report["overall"] = self.overall
        return report


def symmetric_axis(resolution: int) -> np.ndarray:
    """Malla de [-π, π] exactamente simétrica bajo k -> -k"""
    axis = np.linspace(-np.pi, np.pi, resolution)
    return 0.5 * (axis - axis[::-1])


def _eigvalsh_batch(matrices: np.ndarray, ks: np.ndarray, n_bands: int) -> np.ndarray:
    try:
        return np.linalg.eigvalsh(matrices)[:, :n_bands]
    except np.linalg.LinAlgError:
        for matrix, k in zip(matrices, ks):
            try:
                np.linalg.eigvalsh(matrix)
            except np.linalg.LinAlgError as e:
                raise EigenSolverError(f"Fallo del solver hermítico en k={k.tolist()}: {e}", k) from e
        raise


def compute_bands(op: PeriodicOperator, grid_resolution: int, n_bands: int, cutoff: int,
                  threads: int = 1) -> BandGrid:
    """
    Resuelve el problema hermítico en cada nodo de una malla tensorial de [-π, π]^d.

    Args:
        op: operador periódico
        grid_resolution: nodos por eje (≥ 3)
        n_bands: número de bandas a conservar
        cutoff: corte N de la base de Fourier
        threads: hilos para los lotes de la malla

    Returns:
        BandGrid con valores ordenados por nodo, en orden determinista de malla
    """
    if grid_resolution < 3:
        raise ValueError("grid_resolution debe ser ≥ 3 por eje")
    basis = FourierIndexSet(cutoff, op.dimension)
    if n_bands > basis.size:
        raise ValueError(f"n_bands={n_bands} excede el tamaño de la base {basis.size}")
    assembler = get_assembler(op, basis)
    axis = symmetric_axis(grid_resolution)
    mesh = np.meshgrid(*([axis] * op.dimension), indexing="ij")
    points = np.stack([m.reshape(-1) for m in mesh], axis=1)

    batch_size = BAND_CONFIG["batch_size"]
    chunks = [points[i:i + batch_size] for i in range(0, points.shape[0], batch_size)]

    def solve(chunk: np.ndarray) -> np.ndarray:
        return _eigvalsh_batch(assembler.batch(chunk), chunk, n_bands)

    logger.info(f"Calculando {n_bands} bandas en {points.shape[0]} nodos (N={cutoff}, base {basis.size})")
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as executor:
            results = list(executor.map(solve, chunks))
    else:
        results = [solve(chunk) for chunk in chunks]
    values = np.concatenate(results, axis=0)
    return BandGrid(axis=axis, points=points, values=values, cutoff=cutoff, dimension=op.dimension)


def evenness_residual(bands: BandGrid) -> float:
    """max |λ_i(k) - λ_i(-k)| sobre la malla"""
    shape = (bands.resolution,) * bands.dimension + (bands.n_bands,)
    grid = bands.values.reshape(shape)
    mirrored = np.flip(grid, axis=tuple(range(bands.dimension)))
    return float(np.max(np.abs(grid - mirrored)))


def find_gaps(bands: BandGrid) -> List[SpectralGap]:
    """Intervalos abiertos (max banda j, min banda j+1) cuando son positivos"""
    if bands.n_bands < 2:
        raise ValueError("find_gaps necesita al menos 2 bandas")
    gaps = []
    scale = 1.0 + float(np.max(np.abs(bands.values)))
    for j in range(1, bands.n_bands):
        top = float(np.max(bands.band(j)))
        bottom = float(np.min(bands.band(j + 1)))
        if bottom - top > BAND_CONFIG["gap_tol"] * scale:
            inside = (bands.values > top) & (bands.values < bottom)
            gaps.append(SpectralGap(below_band=j, interval=(top, bottom),
                                    certified_on_grid=not bool(np.any(inside))))
            logger.info(f"Gap entre bandas {j} y {j + 1}: ({top:.10g}, {bottom:.10g})")
    if not gaps:
        logger.info("No hay gaps finitos en la malla")
    return gaps


def bottom_gap(bands: BandGrid) -> SpectralGap:
    """Gap semi-infinito (-∞, α₁) debajo de la primera banda"""
    return SpectralGap(below_band=0, interval=(-np.inf, float(np.min(bands.band(1)))))


def _band_data(assembler: FiberAssembler, k: np.ndarray, band: int) -> Tuple[float, np.ndarray, np.ndarray]:
    """Valor, gradiente de Hellmann-Feynman y espectro completo en k real"""
    matrix = assembler.matrix(k)
    try:
        w, v = scipy.linalg.eigh(matrix)
    except (np.linalg.LinAlgError, ValueError) as e:
        raise EigenSolverError(f"Fallo del solver hermítico en k={np.asarray(k).tolist()}: {e}", k) from e
    vec = v[:, band - 1]
    derivatives = assembler.derivatives(k)
    grad = np.real(np.einsum("i,pij,j->p", vec.conj(), derivatives, vec))
    return float(w[band - 1]), grad, w


def band_gradient(op: PeriodicOperator, k, band: int, cutoff: int) -> np.ndarray:
    assembler = get_assembler(op, FourierIndexSet(cutoff, op.dimension))
    return _band_data(assembler, np.asarray(k, dtype=float), band)[1]


def band_hessian(assembler: FiberAssembler, k: np.ndarray, band: int,
                 step: Optional[float] = None) -> np.ndarray:
    """Hessiano por diferencias centrales del gradiente con un paso de Richardson"""
    h = EDGE_CONFIG["hessian_step"] if step is None else step
    d = k.shape[0]

    def central(width: float) -> np.ndarray:
        columns = []
        for q in range(d):
            e = np.zeros(d)
            e[q] = width
            plus = _band_data(assembler, k + e, band)[1]
            minus = _band_data(assembler, k - e, band)[1]
            columns.append((plus - minus) / (2.0 * width))
        return np.stack(columns, axis=1)

    hessian = (4.0 * central(h / 2.0) - central(h)) / 3.0
    return 0.5 * (hessian + hessian.T)


def wrap_quasimomentum(k: np.ndarray) -> np.ndarray:
    """Representante en (-π, π]"""
    return k - 2.0 * np.pi * np.ceil((k - np.pi) / (2.0 * np.pi))


def symmetry_distance(k: np.ndarray) -> Tuple[float, np.ndarray]:
    """Distancia máxima por componente a {0, π} módulo 2π y el punto de simetría más cercano"""
    k = wrap_quasimomentum(np.asarray(k, dtype=float))
    candidates = np.array([0.0, np.pi, -np.pi])
    gaps = np.abs(k[:, None] - candidates[None, :])
    nearest = candidates[np.argmin(gaps, axis=1)]
    nearest = np.where(nearest < 0, np.pi, nearest)
    return float(np.max(np.min(gaps, axis=1))), nearest


def _select_starts(bands: BandGrid, band: int, orientation: int, count: int) -> List[np.ndarray]:
    objective = orientation * bands.band(band)
    order = np.argsort(objective, kind="stable")
    starts: List[np.ndarray] = []
    for idx in order:
        point = bands.points[idx]
        if all(np.linalg.norm(_torus_delta(point, s)) > 1.5 * bands.spacing for s in starts):
            starts.append(point.copy())
        if len(starts) >= count:
            break
    return starts


def _torus_delta(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    return np.mod(p - q + np.pi, 2.0 * np.pi) - np.pi


def locate_edge(op: PeriodicOperator, gap: SpectralGap, side: str, cutoff: int,
                bands: BandGrid, tolerances: Optional[Dict[str, float]] = None,
                starts: Optional[Sequence[Sequence[float]]] = None) -> BandEdge:
    """
    Refina el extremo de la banda adyacente al gap.

    side="lower": máximo de la banda below_band (borde inferior del gap).
    side="upper": mínimo de la banda below_band+1 (borde superior del gap).

    Multi-arranque BFGS desde los mejores nodos de la malla, pulido de Newton con
    el Hessiano por diferencias, y ajuste al punto de simetría más cercano si
    está a menos de tol_sym. Con `starts` se arranca desde esos puntos en lugar
    de la malla.
    """
    tolerances = {**ASSUMPTION_TOLERANCES, **(tolerances or {})}
    if side == "lower":
        if gap.below_band < 1:
            raise ValueError("El gap inferior del espectro no tiene borde 'lower'")
        band, orientation = gap.below_band, -1
    elif side == "upper":
        band, orientation = gap.below_band + 1, 1
    else:
        raise ValueError(f"side debe ser 'lower' o 'upper', no {side!r}")
    if band > bands.n_bands:
        raise ValueError(f"La banda {band} no está en la malla ({bands.n_bands} bandas)")

    assembler = get_assembler(op, FourierIndexSet(cutoff, op.dimension))

    def objective(k: np.ndarray) -> Tuple[float, np.ndarray]:
        value, grad, _ = _band_data(assembler, k, band)
        return orientation * value, orientation * grad

    if starts is None:
        starts = _select_starts(bands, band, orientation, EDGE_CONFIG["n_starts"])
    candidates = []
    for start in [np.asarray(s, dtype=float).reshape(-1) for s in starts]:
        result = scipy.optimize.minimize(objective, start, jac=True, method="BFGS",
                                         options={"gtol": EDGE_CONFIG["gtol"], "maxiter": EDGE_CONFIG["max_iter"]})
        k = np.asarray(result.x, dtype=float)
        for _ in range(EDGE_CONFIG["newton_polish"]):
            _, grad = objective(k)
            if np.linalg.norm(grad) < 1e-13:
                break
            hessian = orientation * band_hessian(assembler, k, band)
            if np.min(np.linalg.eigvalsh(hessian)) <= 0:
                break
            k = k - np.linalg.solve(hessian, grad)
        value, grad = objective(k)
        logger.debug(f"Arranque {start.tolist()} -> k={k.tolist()}, |∇|={np.linalg.norm(grad):.2e}")
        if np.linalg.norm(grad) <= EDGE_CONFIG["accept_gradient"]:
            candidates.append((value, k))
    if not candidates:
        raise ConvergenceError(f"El refinamiento del borde de la banda {band} no convergió")

    value, k_raw = min(candidates, key=lambda item: item[0])
    k_raw = wrap_quasimomentum(k_raw)
    distance, nearest = symmetry_distance(k_raw)
    k0 = nearest if distance <= tolerances["tol_sym"] else k_raw
    if distance <= tolerances["tol_sym"]:
        logger.info(f"k₀ ajustado al punto de simetría {k0.tolist()} (distancia {distance:.2e})")
    else:
        logger.warning(f"k₀={k_raw.tolist()} no es un punto de alta simetría (distancia {distance:.2e})")

    edge_energy, _, spectrum = _band_data(assembler, k0, band)
    hessian = orientation * band_hessian(assembler, k0, band)
    others = np.delete(spectrum, band - 1)
    epsilon0 = 0.5 * float(np.min(np.abs(others - edge_energy))) if others.size else np.inf
    logger.info(f"Borde: banda {band} ({side}), k₀={k0.tolist()}, energía {edge_energy:.12g}")
    return BandEdge(
        band_index=band,
        side=side,
        orientation=orientation,
        k0=k0,
        edge_energy=edge_energy,
        hessian=hessian,
        shift_applied=-edge_energy,
        epsilon0=epsilon0,
        cutoff=cutoff,
        k0_raw=k_raw,
        snap_distance=distance,
        gap=gap,
    )


def check_assumptions(op: PeriodicOperator, edge: BandEdge, bands: BandGrid,
                      tolerances: Optional[Dict[str, float]] = None) -> AssumptionReport:
    """
    Verifica A1-A5 con evidencia numérica. Nunca lanza: los fallos quedan en el reporte.
    """
    tol = {**ASSUMPTION_TOLERANCES, **(tolerances or {})}
    band = edge.band_index
    assembler = get_assembler(op, FourierIndexSet(edge.cutoff, op.dimension))
    scale = 1.0 + abs(edge.edge_energy)

    value, _, spectrum = _band_data(assembler, edge.k0, band)
    a1_value = abs(value - edge.edge_energy)
    a1 = AssumptionCheck("a1", a1_value <= tol["tol_edge"] * scale, a1_value, tol["tol_edge"] * scale)

    if bands.n_bands < band + 1:
        a2 = AssumptionCheck("a2", False, 0.0, tol["tol_margin"] * scale,
                             f"n_bands={bands.n_bands} no cubre la banda {band + 1}")
    else:
        others = np.delete(bands.values, band - 1, axis=1)
        grid_margin = float(np.min(np.abs(others - edge.edge_energy)))
        margin = min(grid_margin, 2.0 * edge.epsilon0)
        a2 = AssumptionCheck("a2", margin >= tol["tol_margin"] * scale, margin, tol["tol_margin"] * scale)

    oriented = edge.orientation * (bands.band(band) - edge.edge_energy)
    width = float(np.max(oriented) - np.min(oriented))
    near = bands.points[oriented <= tol["tol_cluster"] * width]
    spread = float(np.max(np.linalg.norm(_torus_delta(near, edge.k0[None, :]), axis=1))) if near.size else 0.0
    below = float(np.min(oriented))
    a3_pass = spread <= tol["cluster_radius"] and below >= -tol["tol_edge"] * scale
    a3 = AssumptionCheck("a3", a3_pass, spread, tol["cluster_radius"],
                         f"mínimo orientado en malla {below:.3e}, {near.shape[0]} nodos cercanos")

    min_eig = float(np.min(np.linalg.eigvalsh(edge.hessian)))
    a4 = AssumptionCheck("a4", min_eig >= tol["tol_pd"], min_eig, tol["tol_pd"])

    distance, _ = symmetry_distance(edge.k0)
    a5 = AssumptionCheck("a5", distance <= tol["tol_sym"], distance, tol["tol_sym"])

    report = AssumptionReport(a1, a2, a3, a4, a5)
    if report.overall:
        logger.info("Hipótesis A1-A5 verificadas")
    else:
        logger.warning(f"Hipótesis fallidas: {report.failures()}")
    return report


def require_assumptions(report: AssumptionReport):
    """Corta el pipeline si alguna hipótesis falla"""
    if not report.overall:
        raise GapGreenError(f"Hipótesis no satisfechas: {', '.join(report.failures())}")
