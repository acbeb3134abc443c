import numpy as np
import pytest

from fraclink import DomainSpec, build_basis, power_nonlinearity

INTERVAL = DomainSpec("interval", (1.0,))
RECTANGLE = DomainSpec("rectangle", (1.0, 1.0))

# closed-form constant int_0^1 (sqrt(2) sin(pi x))^3 dx = 8*sqrt(2)/(3*pi)
C3 = 8.0 * np.sqrt(2.0) / (3.0 * np.pi)


@pytest.fixture(scope="session")
def interval_basis():
    return build_basis(INTERVAL, 64)


@pytest.fixture(scope="session")
def interval_basis_small():
    return build_basis(INTERVAL, 16)


@pytest.fixture(scope="session")
def rect_basis():
    return build_basis(RECTANGLE, 100)


@pytest.fixture(scope="session")
def rect_basis_small():
    return build_basis(RECTANGLE, 24)


@pytest.fixture(scope="session")
def power3():
    return power_nonlinearity(3.0)
