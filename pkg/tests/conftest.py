import numpy as np
import pytest

from eigalign.mesh import TriangleMesh
from eigalign.operators import build_grid_domain
from eigalign.synthetic import icosphere, perturbed_grid


@pytest.fixture(scope="session")
def sphere3():
    return icosphere(3)


@pytest.fixture(scope="session")
def grid12():
    return build_grid_domain(12)


@pytest.fixture(scope="session")
def patch150():
    return perturbed_grid(15, 10, seed=0)


@pytest.fixture
def triangle():
    return TriangleMesh([[0, 0, 0], [1, 0, 0], [0.5, np.sqrt(3) / 2, 0]], [[0, 1, 2]])
