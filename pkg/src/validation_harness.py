"""
Arnés de validación: barridos radiales oráculo vs término principal, ajustes de
tasas exponenciales y exponentes algebraicos, perfil del resto y reporte final.
"""
import logging
import math
import os
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from src.asymptotics import (LeadingTermInputs, asymptotics_frame, fit_isotropic_constants, integral_I_closed_form,
                             integral_I_numeric, leading_term, leading_term_curvature_form, weierstrass_check,
                             working_radius)
from src.band_structure import (AssumptionReport, BandEdge, BandGrid, SpectralGap, bottom_gap, check_assumptions,
                                compute_bands, evenness_residual, find_gaps, locate_edge)
from src.cache import ResultCache, cache_key
from src.cli_config import RunConfig
from src.complex_dispersion import BlochDispersion
from src.exceptions import FitError, GapGreenError
from src.green_oracle import OracleSample, green_converged, truncation_study
from src.level_set_geometry import (SupportPoint, level_set_trace, support_frame, support_sweep, trace_support,
                                    unit_circle)
from src.operator_model import FourierIndexSet, PeriodicOperator, converge_cutoff, get_assembler, operator_to_dict
from src.report_io import write_csv, write_json

logger = logging.getLogger(__name__)

# Configuración de criterios de aceptación
ACCEPTANCE_CONFIG = {
    "evenness": 1e-10,
    "hermiticity": 1e-13,
    "hermiticity_samples": 100,
    "gauss_residual": 1e-10,
    "level_residual": 1e-10,
    "trace_match": 1e-6,
    "trace_directions": 4,
    "trace_resolution": 256,
    "form_agreement": 1e-8,
    "rate_match": 0.01,
    "algebraic_tolerance": 0.1,
    "oracle_consistency": 1e-6,
    "truncation_separation": 2.0,
    "truncation_cutoffs": [1, 2, 4],
    "truncation_grid": 48,
    "truncation_drop": 0.5,
    "weierstrass_factor": 1.6,
    "weierstrass_radii": [0.08, 0.04, 0.02],
    "i_integral": 0.1,
    "gauge": 1e-13,
    "gauge_trials": 1000,
    "seed": 20240611,
}


@dataclass
class Pipeline:
    config: RunConfig
    op: PeriodicOperator
    cutoff: int
    bands: BandGrid
    gap: SpectralGap
    edge: BandEdge
    assumptions: AssumptionReport
    dispersion: BlochDispersion
    lambdas: List[float]

    def physical(self, lam: float) -> float:
        return self.edge.physical_energy(lam)


@dataclass
class RaySweepRow:
    r: float
    g_oracle: complex
    g_lead: complex
    bloch_modulus: float = 1.0
    converged: bool = True

    @property
    def abs_ratio(self) -> float:
        return abs(self.g_oracle) / abs(self.g_lead)

    @property
    def phase_diff(self) -> float:
        return float(np.angle(self.g_oracle / self.g_lead))

    @property
    def remainder(self) -> complex:
        return self.g_oracle - self.g_lead


@dataclass
class RaySweepTable:
    s: np.ndarray
    lam: float
    h: float
    dimension: int
    rows: List[RaySweepRow] = field(default_factory=list)
    partial: bool = False

    def to_frame(self) -> pd.DataFrame:
        return asymptotics_frame([{
            "r": row.r, "G_oracle": complex(row.g_oracle), "G_lead": complex(row.g_lead),
            "abs_ratio": row.abs_ratio, "phase_diff": row.phase_diff, "remainder": complex(row.remainder),
            "converged": row.converged,
        } for row in self.rows])


@dataclass
class FitResult:
    exp_rate: float
    alg_exponent: float
    r_squared: float
    window: Tuple[float, float]
    n_rows: int

    def to_dict(self) -> Dict[str, Any]:
        return {"exp_rate": self.exp_rate, "alg_exponent": self.alg_exponent, "r_squared": self.r_squared,
                "window": list(self.window), "n_rows": self.n_rows}


def select_directions(directions, dimension: int) -> np.ndarray:
    """Direcciones unitarias: una lista explícita o n puntos equiespaciados"""
    if not isinstance(directions, int):
        vectors = np.asarray(directions, dtype=float)
        return vectors / np.linalg.norm(vectors, axis=1, keepdims=True)
    if dimension == 1:
        return np.array([[1.0], [-1.0]])
    if dimension == 2:
        return unit_circle(directions)
    # espiral de Fibonacci en la esfera
    index = np.arange(directions) + 0.5
    polar = np.arccos(1.0 - 2.0 * index / directions)
    azimuth = np.pi * (1.0 + 5 ** 0.5) * index
    return np.stack([np.cos(azimuth) * np.sin(polar), np.sin(azimuth) * np.sin(polar), np.cos(polar)], axis=1)


def build_pipeline(config: RunConfig, cache: Optional[ResultCache] = None) -> Pipeline:
    op = config.load_operator()
    d = op.dimension
    gap_band = 0 if config.gap == "bottom" else int(config.gap)
    cutoff = config.cutoff
    if cutoff is None:
        cutoff = converge_cutoff(op, np.zeros(d), band=max(gap_band + 1, 2))
    n_bands = max(config.n_bands, gap_band + 2)

    bands = None
    key = cache_key("bands", {"operator": op.content_hash, "cutoff": cutoff,
                              "resolution": config.grid_resolution, "n_bands": n_bands})
    if cache is not None:
        hit = cache.load(key)
        if hit is not None:
            arrays, _ = hit
            bands = BandGrid(axis=arrays["axis"], points=arrays["points"], values=arrays["values"],
                             cutoff=cutoff, dimension=d)
    if bands is None:
        bands = compute_bands(op, config.grid_resolution, n_bands, cutoff, config.threads)
        if cache is not None:
            cache.save(key, {"axis": bands.axis, "points": bands.points, "values": bands.values})

    if config.gap == "bottom":
        gap = bottom_gap(bands)
    else:
        matches = [g for g in find_gaps(bands) if g.below_band == gap_band]
        if not matches:
            raise GapGreenError(f"No hay gap finito entre las bandas {gap_band} y {gap_band + 1}")
        gap = matches[0]

    tolerances = {"tol_sym": config.tolerances["tol_sym"]}
    edge = locate_edge(op, gap, config.side, cutoff, bands, tolerances)
    assumptions = check_assumptions(op, edge, bands, tolerances)
    dispersion = BlochDispersion(op, edge, cutoff, config={"tol_real": config.tolerances["tol_real"],
                                                           "tol_F": config.tolerances["tol_F"]})
    lambdas = list(config.lambda_values) or [-config.lambda_fraction * gap.width]
    for lam in lambdas:
        if not gap.contains(edge.physical_energy(lam)):
            raise GapGreenError(f"λ̃={lam} (físico {edge.physical_energy(lam):.10g}) fuera del gap {gap.interval}")
    return Pipeline(config, op, cutoff, bands, gap, edge, assumptions, dispersion, lambdas)


def _oracle(pipeline: Pipeline, lam: float, xs: np.ndarray, y: np.ndarray, shift=None,
            cache: Optional[ResultCache] = None) -> List[OracleSample]:
    config = pipeline.config
    oracle_config = {"tol_quad": config.tolerances["tol_quad"], "threads": config.threads,
                     "reference_correction": config.reference_correction}
    physical = pipeline.physical(lam)
    payload = {"operator": pipeline.op.content_hash, "lambda": physical, "xs": xs, "y": y,
               "cutoff": pipeline.cutoff, "grid": config.oracle_grid, "shift": shift, "oracle": oracle_config}
    key = cache_key("oracle", payload)
    if cache is not None:
        hit = cache.load(key)
        if hit is not None:
            arrays, meta = hit
            return [OracleSample(x=x, y=y, lam=physical, value=complex(v), grid=int(meta["grid"]),
                                 contour_shift=np.zeros_like(y) if shift is None else np.asarray(shift),
                                 converged=bool(c), cutoff=pipeline.cutoff)
                    for x, v, c in zip(xs, arrays["values"], arrays["converged"])]
    samples = green_converged(pipeline.op, physical, xs, y, pipeline.cutoff, config.oracle_grid, shift,
                              config=oracle_config)
    if cache is not None:
        cache.save(key, {"values": np.array([s.value for s in samples]),
                         "converged": np.array([s.converged for s in samples])},
                   {"grid": samples[0].grid})
    return samples


def ray_sweep(pipeline: Pipeline, sp: SupportPoint, lam: float, r_list: Sequence[float],
              cache: Optional[ResultCache] = None) -> RaySweepTable:
    """Oráculo y término principal en y = 0, x = r·s, una pasada del oráculo por dirección"""
    d = sp.dimension
    table = RaySweepTable(s=sp.s, lam=lam, h=sp.h, dimension=d)
    radii = sorted(float(r) for r in r_list)
    if not radii:
        return table
    y = np.zeros(d)
    xs = np.array([r * sp.s for r in radii])
    pair = pipeline.dispersion.bloch_pair(sp.beta_s)
    samples = _oracle(pipeline, lam, xs, y, cache=cache)
    for r, x, sample in zip(radii, xs, samples):
        inputs = LeadingTermInputs(pipeline.edge, sp, pair, x, y)
        table.rows.append(RaySweepRow(r=r, g_oracle=sample.value, g_lead=leading_term(inputs),
                                      bloch_modulus=abs(inputs.bloch_factor()), converged=sample.converged))
    table.partial = not all(row.converged for row in table.rows)
    return table


def fit_decay(table: RaySweepTable, demodulate: bool = True) -> FitResult:
    """
    Mínimos cuadrados de log|G| ≈ -a·r - b·log r + c en la ventana superior
    (últimas max(4, ⌈2n/3⌉) filas). Con demodulate se divide por |factor de Bloch|.
    """
    rows = sorted(table.rows, key=lambda row: row.r)
    n = len(rows)
    window = rows[-min(n, max(4, math.ceil(2 * n / 3))):] if n else []
    radii = np.array([row.r for row in window])
    if np.unique(radii).size < 3:
        raise FitError(f"Diseño degenerado: {np.unique(radii).size} radios distintos (se necesitan 3)")
    magnitudes = np.array([abs(row.g_oracle) / (row.bloch_modulus if demodulate else 1.0) for row in window])
    design = np.stack([-radii, -np.log(radii), np.ones_like(radii)], axis=1)
    target = np.log(magnitudes)
    coefficients, *_ = np.linalg.lstsq(design, target, rcond=None)
    fitted = design @ coefficients
    total = float(np.sum((target - target.mean()) ** 2))
    r_squared = 1.0 - float(np.sum((target - fitted) ** 2)) / total if total > 0 else 1.0
    return FitResult(exp_rate=float(coefficients[0]), alg_exponent=float(coefficients[1]), r_squared=r_squared,
                     window=(float(radii[0]), float(radii[-1])), n_rows=len(window))


def remainder_profile(table: RaySweepTable, epsilon: float) -> List[Tuple[float, float]]:
    """|G - G_lead|·e^{h r}·r^{d/2-ε} por radio"""
    return [(row.r, abs(row.remainder) * math.exp(table.h * row.r) * row.r ** (table.dimension / 2.0 - epsilon))
            for row in sorted(table.rows, key=lambda row: row.r)]


def profile_nonincreasing(profile: List[Tuple[float, float]], slack: float = 1e-12) -> bool:
    """No creciente en la mitad superior de la ventana de radios"""
    top = [value for _, value in profile[len(profile) // 2:]]
    return all(b <= a * (1.0 + 1e-9) + slack for a, b in zip(top, top[1:]))


def _criterion(passed: bool, measured: Any, expected: Any, tolerance: Any) -> Dict[str, Any]:
    return {"passed": bool(passed), "measured": measured, "expected": expected, "tolerance": tolerance}


class _Stages:
    """Ejecuta etapas capturando errores; el reporte se emite aunque alguna falle"""

    def __init__(self):
        self.status: Dict[str, Dict[str, Any]] = {}

    def run(self, name: str, fn: Callable[[], Any]) -> Any:
        logger.info(f"Etapa {name}...")
        try:
            result = fn()
        except Exception as e:
            logger.error(f"Error en {name}: {e}")
            self.status[name] = {"status": "error", "error": f"{type(e).__name__}: {e}"}
            return None
        self.status[name] = {"status": "ok"}
        return result


def _hermiticity(op: PeriodicOperator, cutoff: int, samples: int, seed: int) -> float:
    rng = np.random.default_rng(seed)
    assembler = get_assembler(op, FourierIndexSet(cutoff, op.dimension))
    worst = 0.0
    for _ in range(samples):
        k = rng.uniform(-np.pi, np.pi, op.dimension) + 1j * rng.uniform(-1.0, 1.0, op.dimension)
        matrix = assembler.matrix(k)
        defect = float(np.max(np.abs(matrix.conj().T - assembler.matrix(np.conj(k)))))
        worst = max(worst, defect / (1.0 + float(np.max(np.abs(matrix)))))
    return worst


def _gauge_defect(inputs: LeadingTermInputs, trials: int, seed: int) -> float:
    rng = np.random.default_rng(seed)
    reference = leading_term(inputs)
    worst = 0.0
    for _ in range(trials):
        a, b = (rng.uniform(0.1, 10.0) * np.exp(2j * np.pi * rng.uniform()) for _ in range(2))
        pair = inputs.pair
        scaled = type(pair)(beta=pair.beta, phi_plus=a * pair.phi_plus, phi_minus=b * pair.phi_minus,
                            pairing=np.conj(b) * a * pair.pairing, indices=pair.indices)
        value = leading_term(LeadingTermInputs(inputs.edge, inputs.sp, scaled, inputs.x, inputs.y))
        worst = max(worst, abs(value - reference) / abs(reference))
    return worst


def _lambda_report(pipeline: Pipeline, lam: float, tag: str, output_dir: str, stages: _Stages,
                   acceptance: Dict[str, Dict[str, Any]], cache: Optional[ResultCache]) -> Dict[str, Any]:
    config = pipeline.config
    accept = ACCEPTANCE_CONFIG
    d = pipeline.op.dimension
    dispersion = pipeline.dispersion
    report: Dict[str, Any] = {"lambda": lam, "lambda_physical": pipeline.physical(lam), "directions": []}
    directions = select_directions(config.directions, d)
    geometry = {"tol_gauss": config.tolerances["tol_gauss"], "tol_level": config.tolerances["tol_level"]}

    points: List[SupportPoint] = stages.run(f"support[{tag}]", lambda: support_sweep(
        dispersion, pipeline.edge, lam, directions, config.threads, geometry)) or []
    if not points:
        return report
    write_csv(support_frame(points), os.path.join(output_dir, f"support_{tag}.csv"),
              plot={"x_column": "theta" if d == 2 else "s1", "y_columns": ["h"]})
    gauss = max(float(np.linalg.norm(p.grad / p.grad_norm + p.s)) for p in points)
    level = max(abs(float(dispersion.energy(p.beta_s).real) - lam) for p in points)
    acceptance[f"gauss_residual[{tag}]"] = _criterion(gauss <= accept["gauss_residual"], gauss, 0.0,
                                                      accept["gauss_residual"])
    acceptance[f"level_residual[{tag}]"] = _criterion(level <= accept["level_residual"], level, 0.0,
                                                      accept["level_residual"])

    if d == 2:
        def trace_check() -> float:
            trace = level_set_trace(dispersion, pipeline.edge, lam, accept["trace_resolution"])
            step = max(1, len(points) // accept["trace_directions"])
            return max(float(np.linalg.norm(trace_support(dispersion, trace, p.s)[1] - p.beta_s))
                       for p in points[::step])

        mismatch = stages.run(f"trace[{tag}]", trace_check)
        if mismatch is not None:
            acceptance[f"trace_match[{tag}]"] = _criterion(mismatch <= accept["trace_match"], mismatch, 0.0,
                                                           accept["trace_match"])

    fit_index = np.unique(np.round(np.linspace(0, len(points), config.fit_directions,
                                               endpoint=False)).astype(int))
    form_gap = 0.0
    oracle_samples: List[Tuple[float, float]] = []
    for position, point in enumerate(points):
        pair = stages.run(f"bloch_pair[{tag}:{position}]", lambda: dispersion.bloch_pair(point.beta_s))
        if pair is None:
            continue
        for r in config.r_list:
            inputs = LeadingTermInputs(pipeline.edge, point, pair, r * point.s, np.zeros(d))
            lead = leading_term(inputs)
            form_gap = max(form_gap, abs(leading_term_curvature_form(inputs) - lead) / abs(lead))
        if position == 0 and config.r_list:
            inputs = LeadingTermInputs(pipeline.edge, point, pair, config.r_list[0] * point.s, np.zeros(d))
            defect = _gauge_defect(inputs, accept["gauge_trials"], accept["seed"])
            acceptance[f"gauge_invariance[{tag}]"] = _criterion(defect <= accept["gauge"], defect, 0.0,
                                                                accept["gauge"])
        if position not in fit_index:
            continue

        record: Dict[str, Any] = {"support": point.to_row()}
        table = stages.run(f"ray_sweep[{tag}:{position}]",
                           lambda: ray_sweep(pipeline, point, lam, config.r_list, cache))
        if table is None:
            report["directions"].append(record)
            continue
        write_csv(table.to_frame(), os.path.join(output_dir, f"ray_{tag}_{position:03d}.csv"),
                  plot={"x_column": "r", "y_columns": ["abs_ratio"]})
        oracle_samples.extend((row.r, abs(row.g_oracle)) for row in table.rows)
        record["abs_ratio"] = [row.abs_ratio for row in table.rows]
        record["phase_diff"] = [row.phase_diff for row in table.rows]
        record["partial"] = table.partial
        fit = stages.run(f"fit[{tag}:{position}]", lambda: fit_decay(table))
        if fit is not None:
            record["fit"] = fit.to_dict()
            rate_error = abs(fit.exp_rate - point.h) / point.h
            acceptance[f"rate_match[{tag}:{position}]"] = _criterion(rate_error <= accept["rate_match"],
                                                                     fit.exp_rate, point.h, accept["rate_match"])
            expected_b = (d - 1) / 2.0
            acceptance[f"algebraic_exponent[{tag}:{position}]"] = _criterion(
                abs(fit.alg_exponent - expected_b) <= accept["algebraic_tolerance"], fit.alg_exponent,
                expected_b, accept["algebraic_tolerance"])
        profile = remainder_profile(table, config.epsilon)
        record["remainder_profile"] = profile
        acceptance[f"remainder_bounded[{tag}:{position}]"] = _criterion(
            profile_nonincreasing(profile), [value for _, value in profile], "no creciente", config.epsilon)
        report["directions"].append(record)

    acceptance[f"form_agreement[{tag}]"] = _criterion(form_gap <= accept["form_agreement"], form_gap, 0.0,
                                                      accept["form_agreement"])
    bound = fit_isotropic_constants(points, lam, oracle_samples or None, d)
    report["isotropic_bound"] = bound.to_dict()

    first = points[0]
    if pipeline.op.has_constant_coefficients:
        def truncation() -> List[float]:
            # separación entera sobre un eje: el error de truncación no cambia de signo con N
            x = accept["truncation_separation"] * np.eye(d)[0]
            frame = truncation_study(pipeline.op, pipeline.physical(lam), x, np.zeros(d),
                                     accept["truncation_cutoffs"], [accept["truncation_grid"]],
                                     {"threads": config.threads})
            write_csv(frame, os.path.join(output_dir, f"truncation_{tag}.csv"),
                      plot={"x_column": "cutoff", "y_columns": ["rel_error"], "log_y": True})
            return frame["rel_error"].tolist()

        errors = stages.run(f"oracle_truncation[{tag}]", truncation)
        if errors is not None:
            shrinking = all(b < a for a, b in zip(errors, errors[1:]))
            acceptance[f"oracle_truncation[{tag}]"] = _criterion(
                shrinking and errors[-1] <= accept["truncation_drop"] * errors[0], errors, "decreciente",
                accept["truncation_drop"])
    elif config.r_list:
        def contour_consistency() -> float:
            xs = np.array([r * first.s for r in config.r_list])
            real = _oracle(pipeline, lam, xs, np.zeros(d), cache=cache)
            shifted = _oracle(pipeline, lam, xs, np.zeros(d), shift=0.5 * first.beta_s, cache=cache)
            return max(abs(a.value - b.value) / abs(a.value) for a, b in zip(real, shifted))

        consistency = stages.run(f"oracle_consistency[{tag}]", contour_consistency)
        if consistency is not None:
            acceptance[f"oracle_consistency[{tag}]"] = _criterion(
                consistency <= accept["oracle_consistency"], consistency, 0.0, accept["oracle_consistency"])

    if d >= 2:
        checks = stages.run(f"weierstrass[{tag}]", lambda: weierstrass_check(
            dispersion, first, accept["weierstrass_radii"]))
        if checks is not None:
            residuals = [checks[float(r)].quadratic_residual for r in accept["weierstrass_radii"]]
            factors = [a / b if b > 0 else np.inf for a, b in zip(residuals, residuals[1:])]
            acceptance[f"weierstrass_quadratic[{tag}]"] = _criterion(
                all(f >= accept["weierstrass_factor"] for f in factors), factors, "≥ factor",
                accept["weierstrass_factor"])
            report["weierstrass"] = {"residuals": residuals,
                                     "working_radius": stages.run(f"working_radius[{tag}]",
                                                                  lambda: working_radius(dispersion, first))}

        def i_integral() -> List[Dict[str, Any]]:
            rows = []
            for r in config.r_list:
                numeric = integral_I_numeric(dispersion, first, config.eta_radius, r)
                closed = integral_I_closed_form(first, r)
                rows.append({"r": r, "I_numeric": numeric, "I_closed": closed, "ratio": abs(numeric) / closed})
            return rows

        rows = stages.run(f"i_integral[{tag}]", i_integral)
        if rows:
            write_csv(asymptotics_frame(rows), os.path.join(output_dir, f"asymptotics_{tag}.csv"),
                      plot={"x_column": "r", "y_columns": ["ratio"]})
            deviations = [abs(row["ratio"] - 1.0) for row in rows]
            decreasing = all(b < a for a, b in zip(deviations, deviations[1:]))
            acceptance[f"i_integral[{tag}]"] = _criterion(decreasing and deviations[-1] <= accept["i_integral"],
                                                          deviations, "decreciente", accept["i_integral"])
    return report


def full_report(config: RunConfig, output_dir: Optional[str] = None) -> Dict[str, Any]:
    """
    bandas → gap → borde → hipótesis → dispersión → puntos soporte → asintótica →
    oráculo → ajustes. Emite report.json y los CSV aunque alguna etapa falle.
    """
    output_dir = output_dir or config.output_dir
    os.makedirs(output_dir, exist_ok=True)
    cache = ResultCache(os.path.join(output_dir, "cache"), enabled=config.cache)
    stages = _Stages()
    acceptance: Dict[str, Dict[str, Any]] = {}
    report: Dict[str, Any] = {"config": {"operator": config.operator if isinstance(config.operator, str) else "inline"}}

    pipeline = stages.run("pipeline", lambda: build_pipeline(config, cache))
    if pipeline is not None:
        accept = ACCEPTANCE_CONFIG
        report["operator"] = {"name": pipeline.op.name, "hash": pipeline.op.content_hash,
                              "description": operator_to_dict(pipeline.op), "cutoff": pipeline.cutoff}
        report["gap"] = pipeline.gap.to_dict()
        report["edge"] = pipeline.edge.to_dict()
        report["assumptions"] = pipeline.assumptions.to_dict()
        write_csv(pipeline.bands.to_frame(), os.path.join(output_dir, "bands.csv"))
        evenness = evenness_residual(pipeline.bands)
        acceptance["evenness"] = _criterion(evenness <= accept["evenness"], evenness, 0.0, accept["evenness"])
        hermiticity = _hermiticity(pipeline.op, pipeline.cutoff, accept["hermiticity_samples"], accept["seed"])
        acceptance["hermiticity"] = _criterion(hermiticity <= accept["hermiticity"], hermiticity, 0.0,
                                               accept["hermiticity"])
        acceptance["assumptions"] = _criterion(pipeline.assumptions.overall, pipeline.assumptions.failures(),
                                               [], None)
        if pipeline.assumptions.overall:
            report["levels"] = [
                _lambda_report(pipeline, lam, f"l{index}", output_dir, stages, acceptance, cache)
                for index, lam in enumerate(pipeline.lambdas)
            ]

    report["stages"] = stages.status
    report["acceptance"] = acceptance
    failed_stages = [name for name, status in stages.status.items() if status["status"] != "ok"]
    report["passed"] = not failed_stages and all(item["passed"] for item in acceptance.values())
    write_json(report, os.path.join(output_dir, "report.json"))
    logger.info(f"Reporte completo: {'aprobado' if report['passed'] else 'con fallos'} "
                f"({len(failed_stages)} etapas fallidas)")
    return report
