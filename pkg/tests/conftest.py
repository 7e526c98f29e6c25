import numpy as np
import pytest

from mirecon.geometry import box_mesh, icosphere, normalize_mesh, torus_mesh


@pytest.fixture(scope="session")
def cube():
    return box_mesh((0.2, 0.2, 0.2), (0.8, 0.8, 0.8))


@pytest.fixture(scope="session")
def sphere():
    return normalize_mesh(icosphere(3))


@pytest.fixture(scope="session")
def torus():
    return torus_mesh()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
