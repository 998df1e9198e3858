"""
Geometría del cuerpo convexo K_λ = {E ≥ λ} y de su frontera Γ_λ: punto soporte
β_s, funcional soporte h(s), marcos tangentes, determinante del Hessiano
proyectado y curvatura de Gauss-Kronecker.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import scipy.optimize

from src.complex_dispersion import DispersionAccessor
from src.exceptions import (BranchTrackingError, ConvergenceError, GeometryError,
                            RealityDefectError)

logger = logging.getLogger(__name__)

# Configuración del Newton de Lagrange y de la traza de Γ_λ
GEOMETRY_CONFIG = {
    "tol_level": 1e-11,
    "tol_gauss": 1e-11,
    "max_iter": 50,
    "damping": 0.5,
    "max_halvings": 30,
    "angular_resolution": 1024,
    "bracket_growth": 1.5,
    "max_bracket_steps": 40,
    "angle_xatol": 1e-10,
    "frame_tol": 1e-8,
}


@dataclass
class SupportPoint:
    s: np.ndarray
    lam: float
    beta_s: np.ndarray
    h: float
    grad_norm: float
    frame: np.ndarray
    proj_hess_det: float
    curvature: float
    newton_residual: float
    multiplier: float
    grad: np.ndarray
    hessian: np.ndarray
    iterations: int = 0

    @property
    def dimension(self) -> int:
        return self.s.shape[0]

    @property
    def projected_hessian(self) -> np.ndarray:
        return -self.frame @ self.hessian @ self.frame.T

    def to_row(self) -> Dict[str, float]:
        row: Dict[str, float] = {}
        if self.dimension == 2:
            row["theta"] = float(np.arctan2(self.s[1], self.s[0]))
        for p in range(self.dimension):
            row[f"s{p + 1}"] = float(self.s[p])
        for p in range(self.dimension):
            row[f"beta{p + 1}"] = float(self.beta_s[p])
        row.update({
            "h": self.h,
            "grad_norm": self.grad_norm,
            "proj_hess_det": self.proj_hess_det,
            "curvature": self.curvature,
            "residual": self.newton_residual,
        })
        return row


@dataclass
class LevelSetTrace:
    lam: float
    angles: np.ndarray
    radii: np.ndarray

    @property
    def points(self) -> np.ndarray:
        return self.radii[:, None] * np.stack([np.cos(self.angles), np.sin(self.angles)], axis=1)

    def is_convex(self) -> bool:
        """Signo del producto cruz entre aristas consecutivas del polígono cerrado"""
        p = self.points
        edges = np.roll(p, -1, axis=0) - p
        nxt = np.roll(edges, -1, axis=0)
        cross = edges[:, 0] * nxt[:, 1] - edges[:, 1] * nxt[:, 0]
        return bool(np.all(cross > 0))

    def to_frame(self) -> pd.DataFrame:
        p = self.points
        return pd.DataFrame({"theta": self.angles, "t": self.radii, "beta1": p[:, 0], "beta2": p[:, 1]})


def tangent_frame(s, tol: Optional[float] = None) -> np.ndarray:
    """
    Vectores ℛ_s⁻¹(e_l), l=2..d, con ℛ_s la rotación en span{s, e₁} que lleva s a e₁
    y fija el complemento ortogonal. Devuelve un arreglo (d-1, d).
    """
    tol = GEOMETRY_CONFIG["frame_tol"] if tol is None else tol
    s = np.asarray(s, dtype=float)
    d = s.shape[0]
    if abs(np.linalg.norm(s) - 1.0) > 1e-10:
        raise ValueError(f"s debe ser unitario, |s|={np.linalg.norm(s):.3e}")
    basis = np.eye(d)
    if d == 1:
        return np.zeros((0, 1))
    if np.linalg.norm(s - basis[0]) <= tol:
        return basis[1:].copy()

    if np.linalg.norm(s + basis[0]) <= tol:
        w = basis[1]
        cos_t, sin_t = -1.0, 0.0
    else:
        perp = s - s[0] * basis[0]
        sin_t = float(np.linalg.norm(perp))
        cos_t = float(s[0])
        w = perp / sin_t

    def inverse_rotation(v: np.ndarray) -> np.ndarray:
        a, b = v[0], float(v @ w)
        return v + (cos_t - 1.0) * (a * basis[0] + b * w) + sin_t * (a * w - b * basis[0])

    return np.array([inverse_rotation(basis[l]) for l in range(1, d)])


def projected_hessian_det(hessian: np.ndarray, frame: np.ndarray) -> float:
    """det(-e_p·Hess E·e_q) sobre el marco tangente"""
    return float(np.linalg.det(-frame @ hessian @ frame.T))


def shape_operator_curvature(hessian: np.ndarray, grad: np.ndarray, frame: np.ndarray) -> float:
    """Curvatura de Gauss-Kronecker det(-𝒫 (Hess E/|∇E|) 𝒫) de Γ_λ"""
    return float(np.linalg.det(-frame @ (hessian / np.linalg.norm(grad)) @ frame.T))


def _energy_and_gradient(dispersion: DispersionAccessor, beta: np.ndarray) -> Tuple[float, np.ndarray]:
    try:
        point = dispersion.evaluate(1j * beta)
    except (BranchTrackingError, RealityDefectError) as e:
        raise GeometryError(f"β={beta.tolist()} fuera de la región de continuación: {e}") from e
    return float(point.value.real), np.real(1j * point.grad)


def _lagrange_residual(energy: float, grad: np.ndarray, mu: float, s: np.ndarray, lam: float) -> np.ndarray:
    return np.concatenate([s + mu * grad, [energy - lam]])


def support_point(dispersion: DispersionAccessor, edge: Any, lam: float, s,
                  tolerances: Optional[Dict[str, Any]] = None) -> SupportPoint:
    """
    Newton amortiguado sobre {s + μ∇E(β) = 0, E(β) = λ} desde el modelo cuadrático
    β₀ = c·H⁻¹s. En el punto soporte μ = 1/|∇E(β_s)| > 0; μ ≤ 0 es el punto opuesto.
    """
    config = {**GEOMETRY_CONFIG, **(tolerances or {})}
    s = np.asarray(s, dtype=float)
    s = s / np.linalg.norm(s)
    if lam >= 0:
        raise GeometryError(f"λ={lam} debe ser negativo (energía dentro del gap)")
    d = s.shape[0]
    hessian0 = np.asarray(edge.hessian if edge is not None else dispersion.hessian0, dtype=float)

    h_inv_s = np.linalg.solve(hessian0, s)
    c = np.sqrt(-2.0 * lam / float(s @ h_inv_s))
    beta = c * h_inv_s
    mu = 1.0 / c

    energy, grad = _energy_and_gradient(dispersion, beta)
    residual = _lagrange_residual(energy, grad, mu, s, lam)
    iterations = 0
    while not (np.linalg.norm(residual[:d]) <= config["tol_gauss"] and abs(residual[d]) <= config["tol_level"]):
        if iterations >= config["max_iter"]:
            raise ConvergenceError(f"Newton sin convergencia para s={s.tolist()} tras {iterations} iteraciones",
                                   float(np.linalg.norm(residual)))
        hessian = dispersion.beta_hessian(beta)
        jacobian = np.zeros((d + 1, d + 1))
        jacobian[:d, :d] = mu * hessian
        jacobian[:d, d] = grad
        jacobian[d, :d] = grad
        try:
            delta = np.linalg.solve(jacobian, -residual)
        except np.linalg.LinAlgError as e:
            raise ConvergenceError(f"Jacobiano de Lagrange singular en β={beta.tolist()}: {e}") from e

        norm = np.linalg.norm(residual)
        step = 1.0
        for _ in range(config["max_halvings"] + 1):
            trial_beta = beta + step * delta[:d]
            trial_mu = mu + step * delta[d]
            trial_energy, trial_grad = _energy_and_gradient(dispersion, trial_beta)
            trial_residual = _lagrange_residual(trial_energy, trial_grad, trial_mu, s, lam)
            if np.linalg.norm(trial_residual) < norm:
                break
            step *= config["damping"]
        else:
            raise GeometryError(f"Newton divergente en s={s.tolist()}: residuo estancado en {norm:.3e}")

        beta, mu, energy, grad, residual = trial_beta, trial_mu, trial_energy, trial_grad, trial_residual
        iterations += 1
        logger.debug(f"Newton s={s.tolist()} it={iterations} paso={step:.3g} residuo={np.linalg.norm(residual):.3e}")

    if mu <= 0:
        raise GeometryError(f"Multiplicador μ={mu:.3e} ≤ 0: punto soporte opuesto para s={s.tolist()}")

    hessian = dispersion.beta_hessian(beta)
    frame = tangent_frame(s)
    det = projected_hessian_det(hessian, frame)
    if det <= 0:
        raise GeometryError(f"Hessiano proyectado no definido ({det:.3e}) en β={beta.tolist()}")
    grad_norm = float(np.linalg.norm(grad))
    return SupportPoint(
        s=s,
        lam=float(lam),
        beta_s=beta,
        h=float(s @ beta),
        grad_norm=grad_norm,
        frame=frame,
        proj_hess_det=det,
        curvature=shape_operator_curvature(hessian, grad, frame),
        newton_residual=float(np.linalg.norm(residual)),
        multiplier=float(mu),
        grad=grad,
        hessian=hessian,
        iterations=iterations,
    )


def support_sweep(dispersion: DispersionAccessor, edge: Any, lam: float, directions: Sequence[Sequence[float]],
                  threads: int = 1, tolerances: Optional[Dict[str, Any]] = None) -> List[SupportPoint]:
    def solve(s) -> SupportPoint:
        return support_point(dispersion, edge, lam, s, tolerances)

    with ThreadPoolExecutor(max_workers=max(1, threads)) as executor:
        points = list(executor.map(solve, directions))
    logger.info(f"Barrido de {len(points)} direcciones en λ={lam}: h ∈ [{min(p.h for p in points):.6g}, "
                f"{max(p.h for p in points):.6g}]")
    return points


def unit_circle(count: int) -> np.ndarray:
    angles = 2.0 * np.pi * np.arange(count) / count
    return np.stack([np.cos(angles), np.sin(angles)], axis=1)


def _radial_root(dispersion: DispersionAccessor, lam: float, u: np.ndarray, guess: float,
                 config: Dict[str, Any]) -> float:
    """Raíz de E(t·u) = λ por brentq con pulido de Newton"""

    def f(t: float) -> float:
        return _energy_and_gradient(dispersion, t * u)[0] - lam

    hi = guess
    for _ in range(config["max_bracket_steps"]):
        if f(hi) < 0:
            break
        hi *= config["bracket_growth"]
    else:
        raise GeometryError(f"Raíz no acotada en la dirección {u.tolist()}: |λ| demasiado grande")
    lo = hi / config["bracket_growth"]
    while lo > 1e-12 and f(lo) < 0:
        lo /= config["bracket_growth"]
    if f(lo) < 0:
        lo = 0.0
    t = scipy.optimize.brentq(f, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps)
    for _ in range(2):
        energy, grad = _energy_and_gradient(dispersion, t * u)
        slope = float(grad @ u)
        if slope == 0:
            break
        t -= (energy - lam) / slope
    return float(t)


def level_set_trace(dispersion: DispersionAccessor, edge: Any, lam: float,
                    angular_resolution: Optional[int] = None,
                    config: Optional[Dict[str, Any]] = None) -> LevelSetTrace:
    """Polígono cerrado que aproxima Γ_λ en d=2, una raíz radial por ángulo"""
    config = {**GEOMETRY_CONFIG, **(config or {})}
    if dispersion.dimension != 2:
        raise GeometryError("level_set_trace solo está disponible en d=2")
    if lam >= 0:
        raise GeometryError(f"λ={lam} debe ser negativo")
    n = angular_resolution or config["angular_resolution"]
    hessian0 = np.asarray(edge.hessian if edge is not None else dispersion.hessian0, dtype=float)
    angles = 2.0 * np.pi * np.arange(n) / n
    radii = np.zeros(n)
    previous = None
    for j, theta in enumerate(angles):
        u = np.array([np.cos(theta), np.sin(theta)])
        guess = previous if previous is not None else np.sqrt(-2.0 * lam / float(u @ hessian0 @ u))
        radii[j] = _radial_root(dispersion, lam, u, guess, config)
        previous = radii[j]
    logger.info(f"Traza de Γ_λ con {n} ángulos: radio ∈ [{radii.min():.6g}, {radii.max():.6g}]")
    return LevelSetTrace(lam=float(lam), angles=angles, radii=radii)


def trace_support(dispersion: DispersionAccessor, trace: LevelSetTrace, s,
                  config: Optional[Dict[str, Any]] = None) -> Tuple[float, np.ndarray]:
    """
    h(s) y β_s por fuerza bruta: argmax de ⟨s, p⟩ sobre los vértices de la traza,
    refinado maximizando en el ángulo entre los vértices vecinos.
    """
    config = {**GEOMETRY_CONFIG, **(config or {})}
    s = np.asarray(s, dtype=float)
    j = int(np.argmax(trace.points @ s))
    width = trace.angles[1] - trace.angles[0]
    center = trace.angles[j]
    guess = float(trace.radii[j])

    def point(theta: float) -> np.ndarray:
        u = np.array([np.cos(theta), np.sin(theta)])
        return _radial_root(dispersion, trace.lam, u, guess, config) * u

    result = scipy.optimize.minimize_scalar(
        lambda theta: -float(s @ point(theta)),
        bounds=(center - width, center + width),
        method="bounded",
        options={"xatol": config["angle_xatol"]},
    )
    beta = point(float(result.x))
    return float(s @ beta), beta


def support_frame(points: List[SupportPoint]) -> pd.DataFrame:
    return pd.DataFrame([p.to_row() for p in points])
