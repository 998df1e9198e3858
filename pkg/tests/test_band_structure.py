import dataclasses

import numpy as np
import pytest
from numpy.testing import assert_allclose

from src.band_structure import (band_gradient, bottom_gap, check_assumptions, compute_bands, evenness_residual,
                                find_gaps, locate_edge, require_assumptions, symmetry_distance,
                                wrap_quasimomentum)
from src.exceptions import GapGreenError
from src.operator_model import free_operator


def test_free_1d_lowest_band_is_parabola():
    bands = compute_bands(free_operator(1), 17, 3, 2)
    assert_allclose(bands.band(1), bands.axis ** 2, atol=1e-12)
    assert bands.values.shape == (17, 3)


def test_band_grid_frame_columns(free_2d):
    frame = compute_bands(free_2d, 5, 2, 1).to_frame()
    assert list(frame.columns) == ["k1", "k2", "lambda1", "lambda2"]
    assert len(frame) == 25


def test_bands_are_even(mathieu_2d):
    bands = compute_bands(mathieu_2d, 9, 3, 2)
    assert evenness_residual(bands) <= 1e-10


def test_threaded_bands_are_identical(mathieu_2d):
    serial = compute_bands(mathieu_2d, 9, 3, 2, threads=1)
    threaded = compute_bands(mathieu_2d, 9, 3, 2, threads=4)
    assert np.array_equal(serial.values, threaded.values)


def test_free_operator_has_no_finite_gap(free_2d):
    assert find_gaps(compute_bands(free_2d, 9, 4, 1)) == []


def test_mathieu_1d_opens_first_gap(mathieu_1d_setup):
    bands, gap, _ = mathieu_1d_setup
    assert gap.below_band == 1
    assert gap.width > 0
    assert gap.interval[0] == pytest.approx(np.max(bands.band(1)))
    assert gap.certified_on_grid


def test_bottom_gap_interval(free_2d):
    bands = compute_bands(free_2d, 9, 2, 1)
    gap = bottom_gap(bands)
    assert gap.interval[0] == -np.inf
    assert gap.interval[1] == pytest.approx(0.0, abs=1e-14)
    assert gap.contains(-0.25) and not gap.contains(0.1)


def test_free_bottom_edge(free_2d_edge):
    edge = free_2d_edge
    assert edge.orientation == 1
    assert edge.k0.tolist() == [0.0, 0.0]
    assert edge.edge_energy == pytest.approx(0.0, abs=1e-12)
    assert_allclose(edge.hessian, 2.0 * np.eye(2), atol=1e-6)
    assert edge.physical_energy(-0.25) == pytest.approx(-0.25, abs=1e-12)


def test_mathieu_1d_lower_edge_at_zone_boundary(mathieu_1d_setup):
    _, gap, edge = mathieu_1d_setup
    assert edge.side == "lower"
    assert edge.orientation == -1
    assert edge.k0.tolist() == [pytest.approx(np.pi)]
    assert edge.edge_energy == pytest.approx(gap.interval[0], abs=1e-9)
    assert edge.hessian[0, 0] > 0
    # λ̃ < 0 cae dentro del gap, por encima de la banda 1
    assert gap.contains(edge.physical_energy(-0.2 * gap.width))


def test_edge_gradient_vanishes(mathieu_1d, mathieu_1d_setup):
    _, _, edge = mathieu_1d_setup
    assert abs(band_gradient(mathieu_1d, edge.k0, 1, 4)[0]) <= 1e-8


@pytest.mark.slow
def test_mathieu_2d_edge_and_assumptions(mathieu_2d, mathieu_2d_setup):
    bands, gap, edge = mathieu_2d_setup
    assert edge.k0.tolist() == [pytest.approx(np.pi), pytest.approx(np.pi)]
    assert np.min(np.linalg.eigvalsh(edge.hessian)) > 0
    report = check_assumptions(mathieu_2d, edge, bands)
    assert report.overall, report.to_dict()
    require_assumptions(report)


def test_edge_refinement_is_idempotent(mathieu_1d, mathieu_1d_setup):
    bands, gap, edge = mathieu_1d_setup
    again = locate_edge(mathieu_1d, gap, "lower", 4, bands, starts=[edge.k0])
    assert np.max(np.abs(again.k0 - edge.k0)) < 1e-10
    assert again.edge_energy == pytest.approx(edge.edge_energy, abs=1e-12)


@pytest.mark.slow
def test_mathieu_2d_edge_is_sum_of_1d_edges(mathieu_1d, mathieu_2d_setup):
    _, gap_2d, edge_2d = mathieu_2d_setup
    # mismo corte que el caso 2D: la base tensorial hace M₂(k) = M₁(k₁) ⊗ 1 + 1 ⊗ M₁(k₂)
    bands_1d = compute_bands(mathieu_1d, 33, 3, edge_2d.cutoff)
    edge_1d = locate_edge(mathieu_1d, find_gaps(bands_1d)[0], "lower", edge_2d.cutoff, bands_1d)
    assert edge_2d.k0.tolist() == [pytest.approx(np.pi, abs=1e-6)] * 2
    assert edge_2d.edge_energy == pytest.approx(2.0 * edge_1d.edge_energy, abs=1e-7)
    assert gap_2d.interval[0] == pytest.approx(2.0 * edge_1d.edge_energy, abs=1e-7)
    h1 = edge_1d.hessian[0, 0]
    assert_allclose(edge_2d.hessian, np.diag([h1, h1]), atol=1e-7)


def test_assumption_report_flags_off_symmetry_edge(mathieu_1d, mathieu_1d_setup):
    bands, _, edge = mathieu_1d_setup
    moved = dataclasses.replace(edge, k0=edge.k0 - 0.1)
    report = check_assumptions(mathieu_1d, moved, bands)
    assert "a5" in report.failures()
    assert not report.overall
    with pytest.raises(GapGreenError, match="a5"):
        require_assumptions(report)


def test_missing_band_fails_margin_check(mathieu_1d, mathieu_1d_setup):
    bands, _, edge = mathieu_1d_setup
    truncated = dataclasses.replace(bands, values=bands.values[:, :1])
    report = check_assumptions(mathieu_1d, edge, truncated)
    assert "a2" in report.failures()


def test_invalid_side(mathieu_1d, mathieu_1d_setup):
    bands, gap, _ = mathieu_1d_setup
    with pytest.raises(ValueError):
        locate_edge(mathieu_1d, gap, "middle", 4, bands)
    with pytest.raises(ValueError):
        locate_edge(mathieu_1d, bottom_gap(bands), "lower", 4, bands)


def test_symmetry_helpers():
    assert wrap_quasimomentum(np.array([-np.pi]))[0] == pytest.approx(np.pi)
    distance, nearest = symmetry_distance(np.array([3.1, 0.01]))
    assert nearest.tolist() == [pytest.approx(np.pi), 0.0]
    assert distance == pytest.approx(np.pi - 3.1)
