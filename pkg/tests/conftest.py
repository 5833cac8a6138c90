import math
from functools import lru_cache

import numpy as np
import pytest

from slitsphere.fem import assemble_system
from slitsphere.geometry import make_cut_spec
from slitsphere.mesh import build_symmetric_mesh

HALF = (math.pi / 2,) * 3


@lru_cache(maxsize=None)
def cached_mesh(n, delta):
    return build_symmetric_mesh(n, make_cut_spec(*delta))


@lru_cache(maxsize=None)
def cached_system(n, delta, enrich=True):
    return assemble_system(cached_mesh(n, delta), enrich=enrich)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_sphere_points(rng, count):
    x = rng.standard_normal((count, 3))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


# one line per acceptance criterion, shown after the run
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
