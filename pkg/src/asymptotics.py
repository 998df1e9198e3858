"""
Término principal de la asintótica de G_λ(x, y) en el gap, su forma con
curvatura, la cota isótropa, las integrales I, J y G₀ en el marco rotado y la
rama de Weierstrass A_s(z') con su forma cuadrática Q_s.

Las integrales singulares se hacen en ξ = ℛ_s(κ): regla del punto medio en ξ'
y Gauss-Legendre compuesta en ξ₁, con paneles geométricos hacia el cuasi-polo
ξ₁ ≈ (i/2)ξ'·Q_s ξ' y ancho máximo π/r para resolver e^{irξ₁}.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from src.complex_dispersion import BlochPair, DispersionAccessor, bloch_values, evaluate_bloch
from src.exceptions import ConvergenceError, FitError, GapGreenError, GeometryError
from src.level_set_geometry import SupportPoint

logger = logging.getLogger(__name__)

# Configuración de cuadraturas y de la rama de Weierstrass
QUADRATURE_CONFIG = {
    "gauss_nodes": 12,
    "panel_ratio": 2.0,
    "outer_per_width": 3.0,
    "min_outer_points": 8,
    "pole_floor": 1e-10,
    "eta_radius": 1.0,
    "newton_tol": 1e-13,
    "newton_max_iter": 30,
    "contour_nodes": 64,
    "start_radius": 0.5,
    "min_radius": 1e-3,
    "winding_tol": 0.1,
    "origin_tol": 1e-9,
}


@dataclass
class LeadingTermInputs:
    edge: Any
    sp: SupportPoint
    pair: BlochPair
    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.y = np.asarray(self.y, dtype=float)
        delta = self.x - self.y
        r = float(np.linalg.norm(delta))
        if r == 0:
            raise GeometryError("x = y: el término principal requiere |x-y| > 0")
        if np.linalg.norm(delta / r - self.sp.s) > 1e-12:
            raise GeometryError(f"Dirección (x-y)/|x-y| no coincide con s={self.sp.s.tolist()}")
        if np.linalg.norm(self.pair.beta - self.sp.beta_s) > 1e-12:
            raise GeometryError("El par de Bloch no corresponde a β_s")

    @property
    def r(self) -> float:
        return float(np.linalg.norm(self.x - self.y))

    @property
    def orientation(self) -> int:
        return 1 if self.edge is None else int(self.edge.orientation)

    @property
    def k0(self) -> np.ndarray:
        return np.zeros_like(self.x) if self.edge is None else np.asarray(self.edge.k0, dtype=float)

    def phase(self) -> complex:
        return complex(np.exp((self.x - self.y) @ (1j * self.k0 - self.sp.beta_s)))

    def bloch_factor(self) -> complex:
        plus, minus = evaluate_bloch(self.pair, self.x, self.y)
        return plus * np.conj(minus) / self.pair.pairing


def leading_term(inputs: LeadingTermInputs) -> complex:
    sp = inputs.sp
    d = sp.dimension
    radial = (2.0 * np.pi * inputs.r) ** (-(d - 1) / 2.0)
    geometric = sp.grad_norm ** ((d - 3) / 2.0) * sp.proj_hess_det ** -0.5
    return inputs.orientation * inputs.phase() * radial * geometric * inputs.bloch_factor()


def leading_term_curvature_form(inputs: LeadingTermInputs) -> complex:
    sp = inputs.sp
    d = sp.dimension
    radial = (2.0 * np.pi * inputs.r) ** (-(d - 1) / 2.0)
    geometric = 1.0 / (sp.grad_norm * math.sqrt(sp.curvature))
    return inputs.orientation * inputs.phase() * radial * geometric * inputs.bloch_factor()


@dataclass
class IsotropicBound:
    c1: float
    c2: float
    lam: float
    dimension: int
    r_min: float = 0.0

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        scale = abs(self.lam) ** ((self.dimension - 3) / 4.0)
        return self.c1 * scale * np.exp(-self.c2 * math.sqrt(abs(self.lam)) * r) / r ** ((self.dimension - 1) / 2.0)

    def to_dict(self) -> Dict[str, float]:
        return {"C1": self.c1, "C2": self.c2, "r_min": self.r_min}


def fit_isotropic_constants(support_points: Sequence[SupportPoint], lam: float,
                            oracle_samples: Optional[Sequence[Tuple[float, float]]] = None,
                            dimension: Optional[int] = None) -> IsotropicBound:
    """
    C₂ = min_s h(s)/|λ|^{1/2}; C₁ es el menor valor (con 5% de margen) que acota
    todas las muestras (r, |G|) del oráculo.
    """
    d = dimension or support_points[0].dimension
    c2 = min(p.h for p in support_points) / math.sqrt(abs(lam))
    if not oracle_samples:
        return IsotropicBound(c1=1.0, c2=c2, lam=lam, dimension=d)
    unit = IsotropicBound(c1=1.0, c2=c2, lam=lam, dimension=d)
    ratios = [abs(g) / float(unit(r)) for r, g in oracle_samples]
    return IsotropicBound(c1=1.05 * max(ratios), c2=c2, lam=lam, dimension=d,
                          r_min=float(min(r for r, _ in oracle_samples)))


def isotropic_bound(lam: float, d: int, fitted_constants: Dict[str, float]) -> IsotropicBound:
    return IsotropicBound(c1=fitted_constants["C1"], c2=fitted_constants["C2"], lam=lam, dimension=d,
                          r_min=fitted_constants.get("r_min", 0.0))


def bump(rho, radius: float) -> np.ndarray:
    """η radial C^∞: 1 en |κ| ≤ radius/2 y 0 desde radius"""
    t = np.clip((np.asarray(rho, dtype=float) - radius / 2.0) / (radius / 2.0), 0.0, 1.0)

    def psi(u: np.ndarray) -> np.ndarray:
        return np.where(u > 0, np.exp(-1.0 / np.where(u > 0, u, 1.0)), 0.0)

    return psi(1.0 - t) / (psi(1.0 - t) + psi(t))


def _panels(pole: float, length: float, cap: float, ratio: float) -> List[Tuple[float, float]]:
    panels = []
    a, width = 0.0, min(pole, cap)
    while a < length:
        b = min(a + width, length)
        panels.append((a, b))
        a = b
        width = min(width * ratio, cap)
    return panels


def _inner_rule(pole: float, length: float, r: float, config: Dict[str, Any], refine: int) -> Tuple[np.ndarray, np.ndarray]:
    nodes, weights = np.polynomial.legendre.leggauss(config["gauss_nodes"])
    cap = np.pi / r / refine
    xs, ws = [], []
    for a, b in _panels(pole / refine, length, cap, config["panel_ratio"]):
        half = 0.5 * (b - a)
        mid = 0.5 * (b + a)
        xs.append(mid + half * nodes)
        ws.append(half * weights)
    right = np.concatenate(xs)
    w = np.concatenate(ws)
    return np.concatenate([-right[::-1], right]), np.concatenate([w[::-1], w])


def rotated_quadrature(sp: SupportPoint, r: float, radius: float, integrand: Callable[[np.ndarray], complex],
                       config: Optional[Dict[str, Any]] = None, refine: int = 1) -> complex:
    """(2π)^{-d} ∫ e^{irξ₁} η(κ) integrand(κ) dκ con κ = ξ₁s + Σ ξ'_l e_l"""
    config = {**QUADRATURE_CONFIG, **(config or {})}
    d = sp.dimension
    if d < 2:
        raise GeometryError("Las integrales I, J y G₀ requieren d ≥ 2 (polo sobre el contorno real en d=1)")
    q = q_matrix(sp)
    width = 1.0 / math.sqrt(r * float(np.max(np.linalg.eigvalsh(q))))
    spacing = min(width / config["outer_per_width"], 2.0 * radius / config["min_outer_points"]) / refine
    count = int(math.ceil(2.0 * radius / spacing))
    count += count % 2
    spacing = 2.0 * radius / count
    axis = -radius + spacing * (np.arange(count) + 0.5)
    outer = np.stack(np.meshgrid(*([axis] * (d - 1)), indexing="ij"), axis=-1).reshape(-1, d - 1)

    partials = []
    for xi_prime in outer:
        rho2 = float(xi_prime @ xi_prime)
        if rho2 >= radius ** 2:
            continue
        pole = max(0.5 * float(xi_prime @ q @ xi_prime), config["pole_floor"])
        xi1, weights = _inner_rule(pole, math.sqrt(radius ** 2 - rho2), r, config, refine)
        transverse = xi_prime @ sp.frame
        kappas = xi1[:, None] * sp.s[None, :] + transverse[None, :]
        eta = bump(np.sqrt(xi1 ** 2 + rho2), radius)
        values = np.array([integrand(kappa) if e > 0 else 0j for kappa, e in zip(kappas, eta)])
        partials.append(np.sum(weights * np.exp(1j * r * xi1) * eta * values))
    total = np.sum(np.array(partials)) * spacing ** (d - 1)
    return complex(total / (2.0 * np.pi) ** d)


def _denominator(dispersion: DispersionAccessor, sp: SupportPoint, kappa: np.ndarray) -> complex:
    return dispersion.evaluate(kappa + 1j * sp.beta_s).value - sp.lam


def integral_I_numeric(dispersion: DispersionAccessor, sp: SupportPoint, eta_radius: float, r: float,
                       config: Optional[Dict[str, Any]] = None, refine: int = 1) -> complex:
    return rotated_quadrature(sp, r, eta_radius, lambda kappa: 1.0 / _denominator(dispersion, sp, kappa),
                              config, refine)


def integral_I_closed_form(sp: SupportPoint, r: float) -> float:
    d = sp.dimension
    return (sp.grad_norm ** ((d - 3) / 2.0) * r ** (-(d - 1) / 2.0)
            * (2.0 * np.pi) ** (-(d - 1) / 2.0) * sp.proj_hess_det ** -0.5)


def _bloch_ratio(dispersion: DispersionAccessor, sp: SupportPoint, kappa: np.ndarray,
                 x: np.ndarray, y: np.ndarray) -> Tuple[complex, complex]:
    """(ρ(κ), denominador): una resolución da φ(k+iβ_s) y φ(k-iβ_s) a la vez"""
    point = dispersion.evaluate(kappa + 1j * sp.beta_s)
    pairing = np.vdot(point.phi_left, point.phi_right)
    plus = bloch_values(point.phi_right, dispersion.indices, x)[0]
    minus = bloch_values(point.phi_left, dispersion.indices, y)[0]
    return plus * np.conj(minus) / pairing, point.value - sp.lam


def integral_J_numeric(dispersion: DispersionAccessor, sp: SupportPoint, eta_radius: float, r: float,
                       component: Optional[int] = None, x=None, y=None,
                       config: Optional[Dict[str, Any]] = None, refine: int = 1) -> complex:
    """
    Con component=l: integrando de I ponderado por κ_l. Sin component: J completo
    con ρ(κ) - ρ(0) evaluado en los puntos x, y.
    """
    if component is not None:
        return rotated_quadrature(sp, r, eta_radius,
                                  lambda kappa: kappa[component] / _denominator(dispersion, sp, kappa),
                                  config, refine)
    x = np.zeros(sp.dimension) if x is None else np.asarray(x, dtype=float)
    y = np.zeros(sp.dimension) if y is None else np.asarray(y, dtype=float)
    rho0, _ = _bloch_ratio(dispersion, sp, np.zeros(sp.dimension), x, y)

    def integrand(kappa: np.ndarray) -> complex:
        rho, denominator = _bloch_ratio(dispersion, sp, kappa, x, y)
        return (rho - rho0) / denominator

    return rotated_quadrature(sp, r, eta_radius, integrand, config, refine)


def reduced_green_numeric(dispersion: DispersionAccessor, sp: SupportPoint, eta_radius: float, x, y,
                          config: Optional[Dict[str, Any]] = None, refine: int = 1) -> complex:
    """G₀ = e^{ik₀·(x-y)} (2π)^{-d}∫ η e^{iκ(x-y)} ρ(κ)/(λ̃(k₀+κ+iβ_s) - λ) dκ"""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    r = float(np.linalg.norm(x - y))
    if np.linalg.norm((x - y) / r - sp.s) > 1e-12:
        raise GeometryError("x - y debe ser paralelo a s")

    def integrand(kappa: np.ndarray) -> complex:
        rho, denominator = _bloch_ratio(dispersion, sp, kappa, x, y)
        return rho / denominator

    phase = np.exp(1j * float(np.asarray(dispersion.k0, dtype=float) @ (x - y)))
    value = complex(phase * rotated_quadrature(sp, r, eta_radius, integrand, config, refine))
    logger.debug(f"G₀ numérico r={r:.4g}: {value:.6e}")
    return value


def reduced_green_leading(sp: SupportPoint, pair: BlochPair, x, y, k0=None) -> complex:
    """Predicción de G₀ a primer orden: I cerrada por el factor de Bloch en β_s y la fase e^{ik₀·(x-y)}"""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    k0 = np.zeros_like(x) if k0 is None else np.asarray(k0, dtype=float)
    plus, minus = evaluate_bloch(pair, x, y)
    phase = np.exp(1j * float(k0 @ (x - y)))
    return complex(phase * integral_I_closed_form(sp, float(np.linalg.norm(x - y))) * plus * np.conj(minus)
                   / pair.pairing)


def fit_power_exponent(radii: Sequence[float], values: Sequence[complex]) -> float:
    """Pendiente de log|v| frente a log r por mínimos cuadrados"""
    radii = np.asarray(radii, dtype=float)
    if np.unique(radii).size < 2:
        raise FitError("Se necesitan al menos dos radios distintos para ajustar un exponente")
    design = np.stack([np.log(radii), np.ones_like(radii)], axis=1)
    coefficients, *_ = np.linalg.lstsq(design, np.log(np.abs(np.asarray(values))), rcond=None)
    return float(coefficients[0])


@dataclass
class WeierstrassCheck:
    s: np.ndarray
    q_matrix: np.ndarray
    samples: List[Tuple[np.ndarray, complex]] = field(default_factory=list)

    def quadratic_prediction(self, z_prime) -> complex:
        z_prime = np.asarray(z_prime, dtype=complex)
        return complex(0.5 * z_prime @ self.q_matrix @ z_prime)

    @property
    def quadratic_residual(self) -> float:
        residuals = [abs(a - self.quadratic_prediction(z)) / np.linalg.norm(z) ** 2
                     for z, a in self.samples if np.linalg.norm(z) > 0]
        return float(max(residuals)) if residuals else 0.0


def q_matrix(sp: SupportPoint) -> np.ndarray:
    """Q_s = -(1/|∇E(β_s)|)(e_p·Hess E(β_s)·e_q)"""
    return sp.projected_hessian / sp.grad_norm


def _weierstrass(dispersion: DispersionAccessor, sp: SupportPoint, z1: complex,
                 z_prime: np.ndarray) -> Tuple[complex, complex]:
    """W_s(z₁, z') y ∂W_s/∂z₁ por la dispersión compleja en coordenadas rotadas"""
    offset = 1j * sp.beta_s - 1j * (z1 * sp.s + z_prime @ sp.frame)
    point = dispersion.evaluate(offset)
    return point.value - sp.lam, complex(point.grad @ (-1j * sp.s))


def weierstrass_branch(dispersion: DispersionAccessor, sp: SupportPoint, z_prime,
                       check: Optional[WeierstrassCheck] = None,
                       config: Optional[Dict[str, Any]] = None) -> complex:
    """A_s(z') por Newton complejo en z₁ desde la predicción ½ z'·Q_s z'"""
    config = {**QUADRATURE_CONFIG, **(config or {})}
    z_prime = np.asarray(z_prime, dtype=complex).reshape(sp.dimension - 1)
    q = q_matrix(sp)
    z1 = complex(0.5 * z_prime @ q @ z_prime)
    for _ in range(config["newton_max_iter"]):
        value, slope = _weierstrass(dispersion, sp, z1, z_prime)
        step = value / slope
        z1 -= step
        if abs(step) <= config["newton_tol"] * (1.0 + abs(z1)):
            break
    else:
        raise ConvergenceError(f"Newton de Weierstrass sin convergencia en z'={z_prime.tolist()}", abs(value))
    if np.linalg.norm(z_prime) == 0 and abs(z1) > config["origin_tol"]:
        raise GeometryError(f"A_s(0) = {z1:.3e} ≠ 0: β_s no está sobre Γ_λ")
    if check is not None:
        check.samples.append((z_prime, z1))
    return z1


def weierstrass_check(dispersion: DispersionAccessor, sp: SupportPoint, radii: Sequence[float],
                      config: Optional[Dict[str, Any]] = None) -> Dict[float, WeierstrassCheck]:
    """Muestras de A_s sobre los ejes ±e_l de ξ' a cada radio"""
    checks = {}
    q = q_matrix(sp)
    for radius in radii:
        check = WeierstrassCheck(s=sp.s, q_matrix=q)
        for axis in np.eye(sp.dimension - 1):
            for sign in (1.0, -1.0):
                weierstrass_branch(dispersion, sp, sign * radius * axis, check, config)
        checks[float(radius)] = check
        logger.info(f"Weierstrass |z'|={radius:.3g}: residuo cuadrático {check.quadratic_residual:.3e}")
    return checks


def weierstrass_root_contour(dispersion: DispersionAccessor, sp: SupportPoint, z_prime, contour_radius: float,
                             nodes: Optional[int] = None) -> Tuple[complex, complex]:
    """
    (A_s(z'), número de vueltas) por el principio del argumento sobre |ω| = contour_radius.
    """
    nodes = nodes or QUADRATURE_CONFIG["contour_nodes"]
    z_prime = np.asarray(z_prime, dtype=complex).reshape(sp.dimension - 1)
    omegas = contour_radius * np.exp(2j * np.pi * np.arange(nodes) / nodes)
    winding, first_moment = [], []
    for omega in omegas:
        value, slope = _weierstrass(dispersion, sp, omega, z_prime)
        winding.append(omega * slope / value)
        first_moment.append(omega ** 2 * slope / value)
    return complex(np.mean(first_moment)), complex(np.mean(winding))


def working_radius(dispersion: DispersionAccessor, sp: SupportPoint,
                   config: Optional[Dict[str, Any]] = None) -> float:
    """Radio del polidisco: se reduce a la mitad hasta que el contorno encierra un único cero"""
    config = {**QUADRATURE_CONFIG, **(config or {})}
    radius = config["start_radius"]
    direction = np.eye(sp.dimension - 1)[0] if sp.dimension > 1 else np.zeros(0)
    while radius >= config["min_radius"]:
        try:
            _, winding = weierstrass_root_contour(dispersion, sp, 0.5 * radius * direction, radius)
            if abs(winding - 1.0) <= config["winding_tol"]:
                logger.info(f"Radio de trabajo de Weierstrass para s={sp.s.tolist()}: {radius:.4g}")
                return radius
        except GapGreenError as e:
            logger.debug(f"Radio {radius:.3g} descartado: {e}")
        radius *= 0.5
    raise GeometryError(f"Sin radio de trabajo ≥ {config['min_radius']} para s={sp.s.tolist()}")


def asymptotics_frame(rows: List[Dict[str, Any]]) -> pd.DataFrame:
    """Separa columnas complejas en re_*/im_*"""
    flat = []
    for row in rows:
        entry = {}
        for key, value in row.items():
            if isinstance(value, complex):
                entry[f"re_{key}"] = value.real
                entry[f"im_{key}"] = value.imag
            else:
                entry[key] = value
        flat.append(entry)
    return pd.DataFrame(flat)
