import numpy as np
import pytest

from tetmg.core.logging import StructuredLogger
from tetmg.services.fe_function import sync_broadcast
from tetmg.services.mesh_service import kuhn_cube, reference_tetrahedron, two_tetrahedra

StructuredLogger.configure_logging("WARNING")


# Session-scoped meshes keep the per-mesh caches (interface maps, element data) warm


@pytest.fixture(scope="session")
def ref_tet():
    return reference_tetrahedron()


@pytest.fixture(scope="session")
def cube():
    return kuhn_cube()


@pytest.fixture(scope="session")
def two_tets():
    return two_tetrahedra()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def randomize(rng):
    """Fill a function with seeded random values and make replicas consistent"""

    def fill_random(fn, level):
        fn.data(level)[...] = rng.standard_normal(fn.data(level).shape)
        sync_broadcast(fn, level)
        return fn

    return fill_random


def sine_solution(x):
    return np.sin(np.pi * x[:, 0]) * np.sin(np.pi * x[:, 1]) * np.sin(np.pi * x[:, 2])


def sine_source(x):
    return 3 * np.pi**2 * sine_solution(x)
