"""
Continuación compleja de la banda: E(β) = λ̃(k₀ + iβ).

La rama se sigue con continuación por solapamiento de vectores propios desde
anclas ya resueltas. El vector propio izquierdo de M(z) es el derecho de
M(conj z) = M(z)^H, de modo que cada resolución entrega φ(z) y φ(conj z).
"""
import logging
import threading
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
import scipy.linalg

from src.band_structure import BandEdge
from src.exceptions import (BranchTrackingError, EigenSolverError, GeometryError,
                            PairingError, RealityDefectError)
from src.operator_model import FourierIndexSet, PeriodicOperator, get_assembler

logger = logging.getLogger(__name__)

# Configuración del seguimiento de ramas
DISPERSION_CONFIG = {
    "max_step": 0.25,
    "max_halvings": 12,
    "overlap_min": 0.5,
    "isolation_tol": 1e-8,
    "tol_real": 1e-8,
    "tol_F": 1e-8,
    "hessian_step": 1e-3,
    "anchor_capacity": 4096,
    "anchor_spacing": 0.1,
    "gauge_threshold": 1e-2,
}


@dataclass
class BranchPoint:
    """Par propio seguido en k₀ + z: valor y gradiente de la banda orientada λ̃"""
    z: np.ndarray
    value: complex
    grad: np.ndarray
    phi_right: np.ndarray
    phi_left: np.ndarray
    isolation: float
    overlap: float = 1.0


@dataclass
class DispersionSample:
    beta: np.ndarray
    energy: float
    grad: np.ndarray
    hessian: np.ndarray
    eigvec: np.ndarray
    reality_defect: float
    isolation_margin: float
    overlap: float = 1.0

    def is_concave(self) -> bool:
        return bool(np.max(np.linalg.eigvalsh(self.hessian)) < 0)


@dataclass
class BlochPair:
    beta: np.ndarray
    phi_plus: np.ndarray
    phi_minus: np.ndarray
    pairing: complex
    indices: np.ndarray


@dataclass
class StepControl:
    step: float = 0.05
    max_halvings: int = 10


class _OverlapLost(Exception):
    pass


def fix_gauge(vector: np.ndarray, threshold: Optional[float] = None) -> np.ndarray:
    """Norma unitaria y primer coeficiente significativo real positivo"""
    threshold = DISPERSION_CONFIG["gauge_threshold"] if threshold is None else threshold
    vector = np.asarray(vector, dtype=complex)
    vector = vector / np.linalg.norm(vector)
    magnitudes = np.abs(vector)
    lead = int(np.argmax(magnitudes >= threshold * magnitudes.max()))
    return vector * (np.conj(vector[lead]) / magnitudes[lead])


class DispersionAccessor:
    """
    Interfaz común de la banda orientada λ̃(k₀ + z) para z complejo.

    Las subclases implementan evaluate(); el resto (E, ∇E, Hess E, rayos,
    pares de Bloch) se construye encima.
    """
    dimension: int
    k0: np.ndarray
    hessian0: np.ndarray
    indices: np.ndarray
    config: Dict[str, Any]

    def evaluate(self, z) -> BranchPoint:
        raise NotImplementedError

    def energy(self, beta) -> complex:
        return self.evaluate(1j * np.asarray(beta, dtype=float)).value

    def beta_gradient(self, beta) -> np.ndarray:
        """∇E(β) = i ∇_k λ̃(k₀ + iβ), parte real"""
        point = self.evaluate(1j * np.asarray(beta, dtype=float))
        return np.real(1j * point.grad)

    def beta_hessian(self, beta) -> np.ndarray:
        """Hess E por diferencias centrales del gradiente con un paso de Richardson"""
        beta = np.asarray(beta, dtype=float)
        h = self.config["hessian_step"]
        d = self.dimension

        def central(width: float) -> np.ndarray:
            columns = []
            for q in range(d):
                e = np.zeros(d)
                e[q] = width
                columns.append((self.beta_gradient(beta + e) - self.beta_gradient(beta - e)) / (2.0 * width))
            return np.stack(columns, axis=1)

        hessian = (4.0 * central(h / 2.0) - central(h)) / 3.0
        return 0.5 * (hessian + hessian.T)

    def sample(self, beta, check_reality: bool = True) -> DispersionSample:
        beta = np.asarray(beta, dtype=float).reshape(self.dimension)
        point = self.evaluate(1j * beta)
        energy = float(point.value.real)
        defect = float(abs(point.value.imag))
        if check_reality and defect > self.config["tol_real"] * (1.0 + abs(energy)):
            raise RealityDefectError(
                f"Defecto de realidad {defect:.3e} en β={beta.tolist()}: discretización gruesa o β fuera de la región",
                defect,
            )
        return DispersionSample(
            beta=beta,
            energy=energy,
            grad=np.real(1j * point.grad),
            hessian=self.beta_hessian(beta),
            eigvec=point.phi_right,
            reality_defect=defect,
            isolation_margin=point.isolation,
            overlap=point.overlap,
        )

    def continue_ray(self, unit_direction, t_max: float,
                     step_control: Optional[StepControl] = None) -> List[DispersionSample]:
        """
        Recorre β = t·u desde t=0; se detiene en t_max, al perder la concavidad
        o al violar la realidad del valor propio. Cada fallo de seguimiento divide
        el paso; tras un paso aceptado el paso se duplica hasta control.step y el
        contador de divisiones vuelve a cero.
        """
        control = step_control or StepControl()
        u = np.asarray(unit_direction, dtype=float).reshape(self.dimension)
        if abs(np.linalg.norm(u) - 1.0) > 1e-12:
            raise ValueError("unit_direction debe estar normalizada")
        samples = [self.sample(np.zeros(self.dimension))]
        t, step, halvings = 0.0, control.step, 0
        while t < t_max:
            t_next = min(t + step, t_max)
            try:
                sample = self.sample(t_next * u)
            except BranchTrackingError as e:
                halvings += 1
                if halvings > control.max_halvings:
                    raise BranchTrackingError(f"Continuación fallida tras t={t:.6g}: {e}",
                                              e.candidates, last_good=t) from e
                step *= 0.5
                continue
            except RealityDefectError as e:
                logger.info(f"Rayo {u.tolist()}: fin de la región real en t={t_next:.4g} ({e.defect:.2e})")
                break
            if not sample.is_concave():
                logger.info(f"Rayo {u.tolist()}: concavidad perdida en t={t_next:.4g}")
                break
            samples.append(sample)
            t = t_next
            step, halvings = min(2.0 * step, control.step), 0
        return samples

    def concavity_radius(self, directions: Sequence[Sequence[float]], t_max: float,
                         step_control: Optional[StepControl] = None) -> float:
        """
        Mayor radio con Hess E definido negativo y defecto de realidad bajo tol_real
        en todas las direcciones muestreadas (mínimo sobre direcciones).
        """
        directions = [np.asarray(u, dtype=float) / np.linalg.norm(u) for u in directions]
        if self.dimension == 2 and len(directions) < 8:
            logger.warning(f"Solo {len(directions)} direcciones: radio no conservador")
        radii = []
        for u in directions:
            samples = self.continue_ray(u, t_max, step_control)
            radii.append(float(np.linalg.norm(samples[-1].beta)))
        radius = min(radii)
        if radius <= 0:
            raise GeometryError("Radio de concavidad nulo: hipótesis violadas en el borde")
        logger.info(f"Radio de concavidad certificado en malla de rayos: {radius:.6g}")
        return radius

    def bloch_pair(self, beta) -> BlochPair:
        """Resoluciones independientes en k₀+iβ y k₀-iβ y emparejamiento F"""
        beta = np.asarray(beta, dtype=float).reshape(self.dimension)
        plus = self.evaluate(1j * beta)
        minus = self.evaluate(-1j * beta)
        pairing = complex(np.vdot(minus.phi_right, plus.phi_right))
        if abs(pairing) < self.config["tol_F"]:
            raise PairingError(f"Emparejamiento |F|={abs(pairing):.3e} bajo tol_F en β={beta.tolist()}", pairing)
        return BlochPair(beta=beta, phi_plus=plus.phi_right, phi_minus=minus.phi_right,
                         pairing=pairing, indices=self.indices)


class BlochDispersion(DispersionAccessor):
    """Banda orientada de un operador periódico, resuelta con eig no hermítico"""

    def __init__(self, op: PeriodicOperator, edge: BandEdge, cutoff: Optional[int] = None,
                 config: Optional[Dict[str, Any]] = None):
        self.config = {**DISPERSION_CONFIG, **(config or {})}
        self.op = op
        self.edge = edge
        self.dimension = op.dimension
        self.k0 = np.asarray(edge.k0, dtype=float)
        self.hessian0 = np.asarray(edge.hessian, dtype=float)
        self.cutoff = edge.cutoff if cutoff is None else cutoff
        self.basis = FourierIndexSet(self.cutoff, op.dimension)
        self.indices = self.basis.indices
        self.assembler = get_assembler(op, self.basis)
        self._lock = threading.Lock()
        self._anchors: List[BranchPoint] = []
        self._anchor_z = np.zeros((0, self.dimension), dtype=complex)
        self._insert(self._origin())

    def _origin(self) -> BranchPoint:
        matrix = self.assembler.matrix(self.k0)
        try:
            w, v = scipy.linalg.eigh(matrix)
        except (np.linalg.LinAlgError, ValueError) as e:
            raise EigenSolverError(f"Fallo del solver hermítico en k₀={self.k0.tolist()}: {e}", self.k0) from e
        j = self.edge.band_index - 1
        vec = fix_gauge(v[:, j])
        others = np.delete(w, j)
        isolation = float(np.min(np.abs(others - w[j]))) if others.size else np.inf
        sigma = self.edge.orientation
        return BranchPoint(
            z=np.zeros(self.dimension, dtype=complex),
            value=complex(sigma * (w[j] - self.edge.edge_energy)),
            grad=np.zeros(self.dimension, dtype=complex),
            phi_right=vec,
            phi_left=vec.copy(),
            isolation=isolation,
        )

    def _insert(self, point: BranchPoint):
        with self._lock:
            if len(self._anchors) >= self.config["anchor_capacity"]:
                keep = len(self._anchors) // 2
                self._anchors = self._anchors[:1] + self._anchors[-keep:]
                self._anchor_z = np.array([a.z for a in self._anchors])
            self._anchors.append(point)
            self._anchor_z = np.vstack([self._anchor_z, point.z[None, :]])

    def _nearest(self, z: np.ndarray) -> BranchPoint:
        with self._lock:
            distances = np.linalg.norm(self._anchor_z - z[None, :], axis=1)
            return self._anchors[int(np.argmin(distances))]

    def _solve(self, z: np.ndarray, reference: BranchPoint) -> BranchPoint:
        k = self.k0 + z
        matrix = self.assembler.matrix(k)
        try:
            w, vl, vr = scipy.linalg.eig(matrix, left=True, right=True)
        except (np.linalg.LinAlgError, ValueError) as e:
            raise EigenSolverError(f"Fallo del solver no hermítico en k={k.tolist()}: {e}", k) from e
        vr = vr / np.linalg.norm(vr, axis=0)
        overlaps = np.abs(reference.phi_right.conj() @ vr)
        best = float(np.max(overlaps))
        if best < self.config["overlap_min"]:
            raise _OverlapLost(best)

        sigma = self.edge.orientation
        reference_physical = self.edge.edge_energy + sigma * reference.value
        predicted = reference_physical + sigma * np.dot(reference.grad, z - reference.z)
        contenders = np.flatnonzero(overlaps >= best - 0.1)
        chosen = int(contenders[np.argmin(np.abs(w[contenders] - predicted))])

        others = np.delete(w, chosen)
        isolation = float(np.min(np.abs(others - w[chosen]))) if others.size else np.inf
        if isolation <= self.config["isolation_tol"] * (1.0 + abs(w[chosen])):
            rival = complex(others[np.argmin(np.abs(others - w[chosen]))])
            raise BranchTrackingError(
                f"Rama ambigua en k={k.tolist()}: valores {w[chosen]:.12g} y {rival:.12g}",
                candidates=[complex(w[chosen]), rival],
                last_good=reference.z,
            )

        right = vr[:, chosen]
        left = vl[:, chosen] / np.linalg.norm(vl[:, chosen])
        derivatives = self.assembler.derivatives(k)
        denominator = np.vdot(left, right)
        grad = np.einsum("i,pij,j->p", left.conj(), derivatives, right) / denominator
        return BranchPoint(
            z=z,
            value=complex(sigma * (w[chosen] - self.edge.edge_energy)),
            grad=sigma * grad,
            phi_right=fix_gauge(right),
            phi_left=fix_gauge(left),
            isolation=isolation,
            overlap=float(overlaps[chosen]),
        )

    def evaluate(self, z) -> BranchPoint:
        target = np.asarray(z, dtype=complex).reshape(self.dimension)
        start = current = self._nearest(target)
        step = self.config["max_step"]
        halvings = 0
        while True:
            distance = float(np.linalg.norm(target - current.z))
            if distance == 0.0:
                return current
            fraction = min(1.0, step / distance)
            trial = target if fraction == 1.0 else current.z + fraction * (target - current.z)
            try:
                point = self._solve(trial, current)
            except _OverlapLost as e:
                halvings += 1
                if halvings > self.config["max_halvings"]:
                    raise BranchTrackingError(
                        f"Solapamiento {e.args[0]:.3f} < {self.config['overlap_min']} tras "
                        f"{halvings - 1} reducciones hacia z={target.tolist()}",
                        last_good=current.z,
                    ) from None
                step *= 0.5
                logger.debug(f"Paso reducido a {step:.3e} en z={current.z.tolist()}")
                continue
            if np.linalg.norm(point.z - start.z) >= self.config["anchor_spacing"]:
                self._insert(point)
            current = point
            if fraction == 1.0:
                return point
            step = min(2.0 * step, self.config["max_step"])


class QuadraticDispersion(DispersionAccessor):
    """Modelo sintético λ̃(k₀ + z) = ½ z·H z, analítico en z, con φ ≡ 1"""

    def __init__(self, hessian, k0=None, config: Optional[Dict[str, Any]] = None):
        self.config = {**DISPERSION_CONFIG, **(config or {})}
        self.hessian0 = np.asarray(hessian, dtype=float)
        self.dimension = self.hessian0.shape[0]
        self.k0 = np.zeros(self.dimension) if k0 is None else np.asarray(k0, dtype=float)
        self.indices = np.zeros((1, self.dimension), dtype=int)

    def evaluate(self, z) -> BranchPoint:
        z = np.asarray(z, dtype=complex).reshape(self.dimension)
        one = np.ones(1, dtype=complex)
        return BranchPoint(z=z, value=complex(0.5 * z @ self.hessian0 @ z), grad=self.hessian0 @ z,
                           phi_right=one, phi_left=one.copy(), isolation=np.inf)

    def beta_hessian(self, beta) -> np.ndarray:
        return -self.hessian0.copy()


def dispersion_at(op: PeriodicOperator, edge: BandEdge, beta, cutoff: Optional[int] = None) -> DispersionSample:
    return BlochDispersion(op, edge, cutoff).sample(beta)


def continue_ray(op: PeriodicOperator, edge: BandEdge, unit_direction, t_max: float,
                 step_control: Optional[StepControl] = None) -> List[DispersionSample]:
    return BlochDispersion(op, edge).continue_ray(unit_direction, t_max, step_control)


def concavity_radius(op: PeriodicOperator, edge: BandEdge, directions, t_max: float = 2.0,
                     step_control: Optional[StepControl] = None) -> float:
    return BlochDispersion(op, edge).concavity_radius(directions, t_max, step_control)


def bloch_pair(op: PeriodicOperator, edge: BandEdge, beta, cutoff: Optional[int] = None) -> BlochPair:
    return BlochDispersion(op, edge, cutoff).bloch_pair(beta)


def bloch_values(coefficients: np.ndarray, indices: np.ndarray, points) -> np.ndarray:
    """Σ_m c_m e^{2πi m·x̄} en la parte fraccionaria de cada punto"""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    fractional = points - np.floor(points)
    return np.exp(2j * np.pi * fractional @ indices.T) @ coefficients


def evaluate_bloch(pair: BlochPair, x, y=None):
    """
    Factores periódicos (φ_{k₀+iβ}(x), φ_{k₀-iβ}(y)); y = x si no se indica.
    """
    x = np.asarray(x, dtype=float)
    y = x if y is None else np.asarray(y, dtype=float)
    plus = complex(bloch_values(pair.phi_plus, pair.indices, x)[0])
    minus = complex(bloch_values(pair.phi_minus, pair.indices, y)[0])
    return plus, minus


def conjugation_relation(pair: BlochPair, k0) -> Dict[str, Any]:
    """
    Relación observada entre φ_{k₀-iβ} y conj(φ_{k₀+iβ}) con índices invertidos y
    desplazados por n₀ = k₀/π (multiplicador e^{2ik₀·x}). Se reporta, no se asume.
    """
    shift = np.rint(np.asarray(k0, dtype=float) / np.pi).astype(int)
    lookup = {tuple(m): i for i, m in enumerate(pair.indices)}
    mirrored = np.zeros_like(pair.phi_plus)
    for i, m in enumerate(pair.indices):
        j = lookup.get(tuple(shift - m))
        if j is not None:
            mirrored[i] = np.conj(pair.phi_plus[j])
    norm = np.vdot(mirrored, mirrored)
    scalar = np.vdot(mirrored, pair.phi_minus) / norm if abs(norm) > 0 else 0j
    residual = float(np.linalg.norm(pair.phi_minus - scalar * mirrored))
    return {"shift": shift.tolist(), "scalar": [float(np.real(scalar)), float(np.imag(scalar))],
            "residual": residual}


def samples_frame(samples: List[DispersionSample]) -> pd.DataFrame:
    """Tabla plana de muestras de un rayo para exportar"""
    rows = []
    for s in samples:
        row: Dict[str, float] = {"t": float(np.linalg.norm(s.beta)), "energy": s.energy}
        for p, value in enumerate(s.beta):
            row[f"beta{p + 1}"] = float(value)
        for p, value in enumerate(s.grad):
            row[f"grad{p + 1}"] = float(value)
        row["hess_max_eig"] = float(np.max(np.linalg.eigvalsh(s.hessian)))
        row["reality_defect"] = s.reality_defect
        row["isolation_margin"] = s.isolation_margin
        rows.append(row)
    return pd.DataFrame(rows)
