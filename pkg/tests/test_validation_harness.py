import json
import math
import os

import numpy as np
import pytest

from src.cli_config import parse_config
from src.exceptions import FitError, GapGreenError
from src.level_set_geometry import support_point
from src.operator_model import free_operator, operator_to_dict
from src.validation_harness import (RaySweepRow, RaySweepTable, build_pipeline, fit_decay, full_report,
                                    profile_nonincreasing, ray_sweep, remainder_profile, select_directions)


def _table(radii, value, h=0.5, modulus=1.0):
    rows = [RaySweepRow(r=r, g_oracle=value(r), g_lead=1.0, bloch_modulus=modulus) for r in radii]
    return RaySweepTable(s=np.array([1.0, 0.0]), lam=-0.25, h=h, dimension=2, rows=rows)


def _free_config(tmp_path, **overrides):
    data = {"operator": operator_to_dict(free_operator(2)), "cutoff": 1, "grid_resolution": 9, "gap": "bottom",
            "lambda": [-0.25], "cache": False, "output_dir": str(tmp_path)}
    data.update(overrides)
    return parse_config(json.dumps(data))


def test_fit_recovers_synthetic_rates():
    table = _table(np.arange(5.0, 45.0, 5.0), lambda r: 3.0 * math.exp(-0.5 * r) * r ** -0.5)
    fit = fit_decay(table)
    assert fit.n_rows == 6
    assert fit.window == (15.0, 40.0)
    assert fit.exp_rate == pytest.approx(0.5, rel=1e-10)
    assert fit.alg_exponent == pytest.approx(0.5, rel=1e-8)
    assert fit.r_squared == pytest.approx(1.0)


def test_demodulation_only_shifts_the_constant():
    value = lambda r: math.exp(-0.7 * r) * r ** -1.0
    plain = fit_decay(_table([4.0, 8.0, 12.0, 16.0], value))
    modulated = fit_decay(_table([4.0, 8.0, 12.0, 16.0], lambda r: 2.5 * value(r), modulus=2.5))
    assert modulated.exp_rate == pytest.approx(plain.exp_rate)
    assert modulated.alg_exponent == pytest.approx(plain.alg_exponent)


def test_fit_needs_three_distinct_radii():
    with pytest.raises(FitError):
        fit_decay(_table([5.0, 5.0, 10.0], lambda r: math.exp(-r)))


def test_empty_sweep_has_no_rows(isotropic):
    sp = support_point(isotropic, None, -0.25, [1.0, 0.0])
    table = ray_sweep(None, sp, -0.25, [])
    assert table.rows == [] and not table.partial
    assert table.h == pytest.approx(0.5)


def test_remainder_profile():
    decaying = _table([2.0, 4.0, 6.0, 8.0], lambda r: 1.0 + math.exp(-0.5 * r) / r)
    profile = remainder_profile(decaying, 0.25)
    # |G - G_lead|·e^{hr}·r^{1-ε} = r^{-ε}
    assert [value for _, value in profile] == pytest.approx([r ** -0.25 for r in (2, 4, 6, 8)])
    assert profile_nonincreasing(profile)
    assert not profile_nonincreasing([(1.0, 1.0), (2.0, 1.0), (3.0, 1.0), (4.0, 2.0)])


def test_ray_sweep_frame_columns():
    frame = _table([1.0, 2.0], lambda r: 0.5j).to_frame()
    assert list(frame.columns) == ["r", "re_G_oracle", "im_G_oracle", "re_G_lead", "im_G_lead", "abs_ratio",
                                   "phase_diff", "re_remainder", "im_remainder", "converged"]
    assert frame["phase_diff"].tolist() == pytest.approx([np.pi / 2] * 2)


def test_select_directions():
    assert select_directions(5, 1).tolist() == [[1.0], [-1.0]]
    assert select_directions(4, 2).shape == (4, 2)
    sphere = select_directions(20, 3)
    assert np.linalg.norm(sphere, axis=1) == pytest.approx(np.ones(20))
    assert select_directions([[3.0, 4.0]], 2).tolist() == [[0.6, 0.8]]


def test_pipeline_rejects_missing_gap(tmp_path):
    config = _free_config(tmp_path, gap=1, side="upper", **{"lambda": []})
    with pytest.raises(GapGreenError, match="No hay gap finito"):
        build_pipeline(config)


def test_free_bottom_pipeline(tmp_path):
    pipeline = build_pipeline(_free_config(tmp_path))
    assert pipeline.cutoff == 1
    assert pipeline.lambdas == [-0.25]
    assert pipeline.physical(-0.25) == pytest.approx(-0.25)
    assert pipeline.gap.interval[0] == -np.inf
    assert pipeline.assumptions.overall
    assert pipeline.dispersion.energy([0.5, 0.0]).real == pytest.approx(-0.25, abs=1e-10)


def test_report_is_written_when_pipeline_fails(tmp_path):
    report = full_report(_free_config(tmp_path, gap=1, side="upper", **{"lambda": []}))
    assert report["passed"] is False
    assert report["stages"]["pipeline"]["status"] == "error"
    with open(tmp_path / "report.json", encoding="utf-8") as f:
        written = json.load(f)
    assert written["schema_version"] == "1.0"
    assert written["passed"] is False


@pytest.mark.slow
def test_free_operator_full_report(tmp_path):
    config = _free_config(tmp_path, directions=8, fit_directions=2, r_list=[10.0, 15.0, 20.0, 25.0],
                          eta_radius=1.5)
    report = full_report(config)
    assert all(stage["status"] == "ok" for stage in report["stages"].values()), report["stages"]
    acceptance = report["acceptance"]
    for name in ("evenness", "hermiticity", "assumptions", "gauss_residual[l0]", "level_residual[l0]",
                 "trace_match[l0]", "form_agreement[l0]", "gauge_invariance[l0]", "oracle_truncation[l0]",
                 "weierstrass_quadratic[l0]"):
        assert acceptance[name]["passed"], (name, acceptance[name])
    assert "oracle_consistency[l0]" not in acceptance
    rates = [item for key, item in acceptance.items() if key.startswith(("rate_match", "algebraic_exponent"))]
    assert len(rates) == 4
    assert all(item["passed"] for item in rates), rates
    assert report["levels"][0]["isotropic_bound"]["C2"] == pytest.approx(1.0)
    for name in ("report.json", "bands.csv", "support_l0.csv", "ray_l0_000.csv", "asymptotics_l0.csv",
                 "truncation_l0.csv", "plot_support_l0.py"):
        assert os.path.exists(tmp_path / name), name
