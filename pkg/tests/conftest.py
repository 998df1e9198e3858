import numpy as np
import pytest

from src.band_structure import bottom_gap, compute_bands, find_gaps, locate_edge
from src.complex_dispersion import BlochDispersion, QuadraticDispersion
from src.operator_model import free_operator, mathieu_operator


@pytest.fixture(scope="session")
def free_2d():
    return free_operator(2)


@pytest.fixture(scope="session")
def mathieu_1d():
    return mathieu_operator(1, 5.0)


@pytest.fixture(scope="session")
def mathieu_2d():
    return mathieu_operator(2, 5.0)


@pytest.fixture
def isotropic():
    """λ̃ = z·z: idéntico a la banda inferior de -Δ en d=2"""
    return QuadraticDispersion(2.0 * np.eye(2))


@pytest.fixture
def anisotropic():
    return QuadraticDispersion(np.diag([2.0, 8.0]))


@pytest.fixture(scope="session")
def free_2d_edge(free_2d):
    bands = compute_bands(free_2d, 9, 4, 1)
    return locate_edge(free_2d, bottom_gap(bands), "upper", 1, bands)


@pytest.fixture(scope="session")
def mathieu_1d_setup(mathieu_1d):
    """(bandas, gap 1, borde inferior = máximo de la banda 1) con N=4"""
    bands = compute_bands(mathieu_1d, 33, 4, 4)
    gap = find_gaps(bands)[0]
    edge = locate_edge(mathieu_1d, gap, "lower", 4, bands)
    return bands, gap, edge


@pytest.fixture
def mathieu_1d_dispersion(mathieu_1d, mathieu_1d_setup):
    return BlochDispersion(mathieu_1d, mathieu_1d_setup[2])


@pytest.fixture(scope="session")
def mathieu_2d_setup(mathieu_2d):
    """Borde inferior del primer gap del Mathieu 2D q=5 con un corte pequeño (N=3)"""
    bands = compute_bands(mathieu_2d, 17, 3, 3)
    gap = [g for g in find_gaps(bands) if g.below_band == 1][0]
    edge = locate_edge(mathieu_2d, gap, "lower", 3, bands)
    return bands, gap, edge
