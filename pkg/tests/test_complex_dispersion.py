import numpy as np
import pytest
import scipy.linalg
from numpy.testing import assert_allclose

from src.complex_dispersion import (BlochDispersion, BlochPair, QuadraticDispersion, StepControl, bloch_values,
                                    conjugation_relation, dispersion_at, evaluate_bloch, fix_gauge, samples_frame)
from src.exceptions import BranchTrackingError, PairingError, RealityDefectError


class _LeakyDispersion(QuadraticDispersion):
    """Modelo cuadrático cuyo valor se vuelve complejo para |β| > 0.3"""

    def evaluate(self, z):
        point = super().evaluate(z)
        point.value += 1j * max(0.0, float(np.linalg.norm(np.imag(z))) - 0.3)
        return point


class _FragileDispersion(QuadraticDispersion):
    """Modelo cuadrático que pierde la rama si el salto en |β| supera 0.02 dentro de 0.2 < |β| < 0.3 o 0.6 < |β| < 0.7"""

    def __init__(self, hessian):
        super().__init__(hessian)
        self.last = 0.0
        self.failures = 0

    def sample(self, beta, check_reality: bool = True):
        t = float(np.linalg.norm(beta))
        if (0.2 < t < 0.3 or 0.6 < t < 0.7) and t - self.last > 0.02:
            self.failures += 1
            raise BranchTrackingError(f"Salto {t - self.last:.3g} demasiado grande", last_good=self.last)
        self.last = t
        return super().sample(beta, check_reality)


def _mathieu_matrix(k, q=5.0, cutoff=4):
    m = np.arange(-cutoff, cutoff + 1)
    matrix = np.diag((2.0 * np.pi * m + k) ** 2).astype(complex)
    matrix += q * (np.eye(len(m), k=1) + np.eye(len(m), k=-1))
    return matrix


def test_free_dispersion_is_exact(free_2d, free_2d_edge):
    dispersion = BlochDispersion(free_2d, free_2d_edge)
    beta = np.array([0.3, 0.4])
    assert dispersion.energy(beta).real == pytest.approx(-0.25, abs=1e-12)
    assert_allclose(dispersion.beta_gradient(beta), -2.0 * beta, atol=1e-12)
    assert_allclose(dispersion.beta_hessian(beta), -2.0 * np.eye(2), atol=1e-7)


def test_free_sample_is_real_and_concave(free_2d, free_2d_edge):
    sample = BlochDispersion(free_2d, free_2d_edge).sample([0.2, -0.1])
    assert sample.reality_defect <= 1e-12
    assert sample.is_concave()
    assert sample.isolation_margin > 1.0


def test_mathieu_1d_continuation_matches_dense_eig(mathieu_1d_dispersion, mathieu_1d_setup):
    _, _, edge = mathieu_1d_setup
    for beta in (0.1, 0.3, 0.6):
        sample = mathieu_1d_dispersion.sample([beta])
        assert sample.energy < 0
        physical = edge.physical_energy(sample.energy)
        values = scipy.linalg.eigvals(_mathieu_matrix(np.pi + 1j * beta))
        nearest = values[np.argmin(np.abs(values - physical))]
        assert abs(nearest.imag) <= 1e-8
        assert nearest.real == pytest.approx(physical, rel=1e-10, abs=1e-10)


def test_mathieu_1d_energy_is_even(mathieu_1d_dispersion):
    assert mathieu_1d_dispersion.energy([0.4]).real == pytest.approx(
        mathieu_1d_dispersion.energy([-0.4]).real, abs=1e-10)


def test_gradient_matches_finite_differences(mathieu_1d_dispersion):
    h = 1e-5
    numeric = (mathieu_1d_dispersion.energy([0.3 + h]).real - mathieu_1d_dispersion.energy([0.3 - h]).real) / (2 * h)
    assert mathieu_1d_dispersion.beta_gradient([0.3])[0] == pytest.approx(numeric, rel=1e-6)


def test_evaluation_is_path_independent(mathieu_1d, mathieu_1d_setup):
    _, _, edge = mathieu_1d_setup
    fresh = BlochDispersion(mathieu_1d, edge)
    warmed = BlochDispersion(mathieu_1d, edge)
    for beta in (0.6, 0.5, 0.2):
        warmed.evaluate(1j * np.array([beta]))
    target = 1j * np.array([0.35])
    assert fresh.evaluate(target).value == warmed.evaluate(target).value


def test_continue_ray_stops_at_reality_defect():
    dispersion = _LeakyDispersion(2.0 * np.eye(2))
    samples = dispersion.continue_ray([1.0, 0.0], 1.0)
    assert np.linalg.norm(samples[-1].beta) == pytest.approx(0.3)
    assert all(s.is_concave() for s in samples)
    assert len(samples_frame(samples)) == len(samples)


def test_continue_ray_recovers_step_after_tracking_failures():
    dispersion = _FragileDispersion(2.0 * np.eye(2))
    samples = dispersion.continue_ray([1.0, 0.0], 1.0, StepControl(step=0.05, max_halvings=2))
    t = np.array([np.linalg.norm(s.beta) for s in samples])
    assert t[-1] == pytest.approx(1.0)
    # más divisiones en total que max_halvings: el contador se reinicia tras cada paso aceptado
    assert dispersion.failures > 2
    assert np.max(np.diff(t[(t > 0.2) & (t < 0.3)])) <= 0.02
    assert np.max(np.diff(t[t > 0.75])) == pytest.approx(0.05)


def test_concavity_radius_is_minimum_over_rays():
    dispersion = _LeakyDispersion(2.0 * np.eye(2))
    directions = [[np.cos(t), np.sin(t)] for t in np.linspace(0, 2 * np.pi, 8, endpoint=False)]
    radius = dispersion.concavity_radius(directions, 1.0, StepControl(step=0.1))
    assert radius == pytest.approx(0.3)


def test_sample_raises_on_reality_defect():
    with pytest.raises(RealityDefectError):
        _LeakyDispersion(2.0 * np.eye(2)).sample([0.6, 0.0])


def test_continue_ray_requires_unit_direction(isotropic):
    with pytest.raises(ValueError):
        isotropic.continue_ray([2.0, 0.0], 1.0)


def test_fix_gauge():
    vector = fix_gauge(np.array([0.0, 1j, 1.0]))
    assert np.linalg.norm(vector) == pytest.approx(1.0)
    assert vector[1].imag == pytest.approx(0.0, abs=1e-15)
    assert vector[1].real > 0


def test_free_bloch_pair_and_gauge(free_2d, free_2d_edge):
    pair = BlochDispersion(free_2d, free_2d_edge).bloch_pair([0.3, 0.0])
    assert pair.pairing == pytest.approx(1.0)
    plus, minus = evaluate_bloch(pair, [1.7, 2.3], [0.2, 0.9])
    assert plus == pytest.approx(1.0) and minus == pytest.approx(1.0)
    relation = conjugation_relation(pair, free_2d_edge.k0)
    assert relation["shift"] == [0, 0]
    assert relation["residual"] <= 1e-12


def test_bloch_pair_rejects_vanishing_pairing():
    class _Orthogonal(QuadraticDispersion):
        def evaluate(self, z):
            point = super().evaluate(z)
            if np.imag(z).sum() < 0:
                point.phi_right = np.zeros(1, dtype=complex)
            return point

    with pytest.raises(PairingError):
        _Orthogonal(2.0 * np.eye(2)).bloch_pair([0.2, 0.1])


def test_mathieu_bloch_pair_is_gauge_invariant(mathieu_1d_dispersion):
    pair = mathieu_1d_dispersion.bloch_pair([0.4])
    x, y = np.array([2.3]), np.array([0.6])
    plus, minus = evaluate_bloch(pair, x, y)
    reference = plus * np.conj(minus) / pair.pairing
    a, b = 2.0 * np.exp(0.7j), 0.5 * np.exp(-1.9j)
    scaled = BlochPair(pair.beta, a * pair.phi_plus, b * pair.phi_minus, np.conj(b) * a * pair.pairing,
                       pair.indices)
    plus, minus = evaluate_bloch(scaled, x, y)
    assert plus * np.conj(minus) / scaled.pairing == pytest.approx(reference, rel=1e-13)


def test_bloch_values_are_periodic():
    indices = np.array([[-1], [0], [1]])
    coefficients = np.array([0.2, 1.0, 0.3j])
    assert_allclose(bloch_values(coefficients, indices, [[0.25], [1.25], [-2.75]]),
                    np.full(3, bloch_values(coefficients, indices, [[0.25]])[0]), atol=1e-14)


def test_dispersion_at_free_edge(free_2d, free_2d_edge):
    sample = dispersion_at(free_2d, free_2d_edge, [0.3, 0.4])
    assert sample.energy == pytest.approx(-0.25, abs=1e-10)
    assert_allclose(sample.grad, [-0.6, -0.8], atol=1e-8)
    assert sample.reality_defect < 1e-10
