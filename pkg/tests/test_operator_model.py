import numpy as np
import pytest
import scipy.linalg
from numpy.testing import assert_allclose

from src.exceptions import ConvergenceError, OperatorError
from src.operator_model import (FourierIndexSet, PeriodicOperator, assemble_fiber, assemble_fiber_batch,
                                converge_cutoff, evaluate_coefficients, fiber_derivatives, get_assembler,
                                hermiticity_residual, lowest_eigenvalues, operator_from_dict, operator_to_dict,
                                sample_ellipticity, separable_cosine_operator)


def test_index_set_is_lexicographic():
    basis = FourierIndexSet(1, 2)
    assert basis.size == 9
    assert basis.indices[0].tolist() == [-1, -1]
    assert basis.indices[1].tolist() == [-1, 0]
    assert basis.indices[-1].tolist() == [1, 1]
    assert basis.position([0, 0]) == 4


def test_index_set_rejects_negative_cutoff():
    with pytest.raises(OperatorError):
        FourierIndexSet(-1, 2)


def test_free_fiber_is_diagonal(free_2d):
    basis = FourierIndexSet(1, 2)
    k = np.array([0.3, -1.1])
    entries = assemble_fiber(free_2d, k, basis).entries
    expected = np.sum((2.0 * np.pi * basis.indices + k) ** 2, axis=1)
    assert_allclose(np.diag(entries).real, expected, rtol=1e-14)
    assert np.max(np.abs(entries - np.diag(np.diag(entries)))) == 0.0


def test_mathieu_1d_matches_tridiagonal(mathieu_1d):
    cutoff, k = 6, 0.7
    basis = FourierIndexSet(cutoff, 1)
    m = np.arange(-cutoff, cutoff + 1)
    diagonal = (2.0 * np.pi * m + k) ** 2
    off = np.full(2 * cutoff, 5.0)
    expected = scipy.linalg.eigh_tridiagonal(diagonal, off, eigvals_only=True)
    values = lowest_eigenvalues(mathieu_1d, [k], basis, basis.size)
    assert_allclose(values, expected, rtol=1e-12, atol=1e-10)


def test_hermiticity_at_complex_quasimomenta(mathieu_2d):
    rng = np.random.default_rng(7)
    basis = FourierIndexSet(3, 2)
    for _ in range(20):
        k = rng.uniform(-np.pi, np.pi, 2) + 1j * rng.uniform(-1, 1, 2)
        assert hermiticity_residual(mathieu_2d, k, basis) <= 1e-13 * (1 + 40.0 ** 2)


def test_derivatives_match_central_differences(mathieu_2d):
    basis = FourierIndexSet(2, 2)
    assembler = get_assembler(mathieu_2d, basis)
    k = np.array([0.4 + 0.2j, -0.9 + 0.1j])
    h = 1e-4
    derivatives = fiber_derivatives(mathieu_2d, k, basis)
    for p in range(2):
        e = np.zeros(2)
        e[p] = h
        numeric = (assembler.matrix(k + e) - assembler.matrix(k - e)) / (2 * h)
        assert_allclose(derivatives[p], numeric, atol=1e-6)


def test_coefficient_symmetry_is_enforced():
    with pytest.raises(OperatorError, match="simétricos"):
        PeriodicOperator(dimension=1, metric_coeffs={(0,): [[1.0]]}, potential_coeffs={(1,): 1.0})


def test_ellipticity_floor_is_enforced():
    with pytest.raises(OperatorError, match="Elipticidad"):
        PeriodicOperator(dimension=1, metric_coeffs={(0,): [[0.1]]}, ellipticity_floor=0.5)


def test_unsupported_dimension():
    with pytest.raises(OperatorError):
        PeriodicOperator(dimension=4, metric_coeffs={(0, 0, 0, 0): np.eye(4)})


def test_evaluate_coefficients(mathieu_1d):
    metric, potential = evaluate_coefficients(mathieu_1d, [0.0])
    assert_allclose(metric, [[1.0]])
    assert potential == pytest.approx(10.0)
    _, potential = evaluate_coefficients(mathieu_1d, [0.5])
    assert potential == pytest.approx(-10.0)


def test_corrupted_coefficients_are_detected():
    data = {"dimension": 1, "metric": [{"index": [0], "matrix": [[1.0]]}],
            "potential": [{"index": [1], "value": [0.0, 1.0]}]}
    op = operator_from_dict(data, validate=False)
    with pytest.raises(OperatorError, match="no reales"):
        evaluate_coefficients(op, [0.0])


def test_dimension_mismatch_in_fiber(free_2d):
    with pytest.raises(OperatorError):
        get_assembler(free_2d, FourierIndexSet(1, 2)).matrix([0.1, 0.2, 0.3])
    with pytest.raises(OperatorError):
        get_assembler(free_2d, FourierIndexSet(1, 1))


def test_operator_description_preserves_hash(mathieu_2d):
    restored = operator_from_dict(operator_to_dict(mathieu_2d))
    assert restored.content_hash == mathieu_2d.content_hash
    assert restored.name == "mathieu_2d_q5"


def test_sampled_ellipticity():
    op = PeriodicOperator(dimension=1, metric_coeffs={(0,): [[1.0]], (1,): [[0.25]], (-1,): [[0.25]]},
                          ellipticity_floor=0.1)
    # A(x) = 1 + 0.5 cos(2πx) con mínimo 0.5 en x = 1/2
    assert sample_ellipticity(op) == pytest.approx(0.5)


def test_cutoff_converges_for_free_operator(free_2d):
    assert converge_cutoff(free_2d, np.zeros(2), band=1) == 2


def test_cutoff_convergence_failure(mathieu_1d):
    with pytest.raises(ConvergenceError):
        converge_cutoff(mathieu_1d, [0.0], band=3, tol=1e-30, start=1, n_max=3)


def test_separable_operator_skips_zero_amplitudes():
    op = separable_cosine_operator([2.0, 0.0])
    assert set(op.potential_coeffs) == {(1, 0), (-1, 0)}


def test_batch_matches_single_assembly(mathieu_2d):
    basis = FourierIndexSet(1, 2)
    ks = np.array([[0.3 + 0.2j, -1.0], [np.pi, 0.5j]])
    stack = assemble_fiber_batch(mathieu_2d, ks, basis)
    assert stack.shape == (2, basis.size, basis.size)
    for k, matrix in zip(ks, stack):
        assert_allclose(matrix, assemble_fiber(mathieu_2d, k, basis).entries, atol=1e-13)


def test_constant_coefficient_flag(free_2d, mathieu_2d):
    assert free_2d.has_constant_coefficients
    assert not mathieu_2d.has_constant_coefficients


@pytest.mark.parametrize("name", ["free_2d", "mathieu_2d"])
def test_eigenvalues_do_not_increase_with_cutoff(request, name):
    op = request.getfixturevalue(name)
    k = np.array([0.7, -2.1])
    previous = lowest_eigenvalues(op, k, FourierIndexSet(1, 2), 6)
    for cutoff in (2, 3):
        current = lowest_eigenvalues(op, k, FourierIndexSet(cutoff, 2), 6)
        assert np.all(current <= previous + 1e-12)
        previous = current


def test_shifted_index_set_matches_shifted_quasimomentum(mathieu_2d):
    basis = FourierIndexSet(2, 2)
    k = np.array([0.4 + 0.1j, -1.3])
    m = np.array([1, -2])
    moved = assemble_fiber(mathieu_2d, k + 2 * np.pi * m, basis).entries
    relabelled = assemble_fiber(mathieu_2d, k, basis.shifted(m)).entries
    assert_allclose(moved, relabelled, rtol=1e-12, atol=1e-9)
    real_k = np.real(k)
    assert_allclose(lowest_eigenvalues(mathieu_2d, real_k + 2 * np.pi * m, basis, 5),
                    lowest_eigenvalues(mathieu_2d, real_k, basis.shifted(m), 5), rtol=1e-12, atol=1e-9)
