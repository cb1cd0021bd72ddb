import numpy as np
import pytest

from lowrank_dork.manifold import LowRankState
from lowrank_dork.matcore import orth


def random_state(rng, m, n, r, scale=1.0, spread=None):
    """Random rank-r state; ``spread`` fixes the singular values to a geometric range."""
    u = orth(rng.standard_normal((m, r))).q
    if spread is None:
        z = rng.standard_normal((n, r)) * scale
    else:
        w = orth(rng.standard_normal((n, r))).q
        s = np.geomspace(1.0, spread, r) * scale
        z = w * s
    return LowRankState(u, z)


def unit(a):
    return a / np.linalg.norm(a)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
