import numpy as np
import pytest

from landau_lab.coefficients import build_coefficients
from landau_lab.grid import make_grid, maxwellian, squeezed_gaussian


@pytest.fixture(scope="session")
def grid16():
    return make_grid(3, 8.0, 16)


@pytest.fixture(scope="session")
def grid24():
    return make_grid(3, 8.0, 24)


@pytest.fixture(scope="session")
def maxwellian16(grid16):
    return maxwellian(grid16)


@pytest.fixture(scope="session")
def maxwellian24(grid24):
    return maxwellian(grid24)


@pytest.fixture(scope="session")
def bundle16_m1(maxwellian16):
    return build_coefficients(maxwellian16, -1.0)


@pytest.fixture(scope="session")
def bundle24_m1(maxwellian24):
    return build_coefficients(maxwellian24, -1.0)


@pytest.fixture(scope="session")
def squeezed24(grid24):
    return squeezed_gaussian(grid24, 0.5, 0.5)


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(1234)
