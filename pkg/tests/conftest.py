import numpy as np
import pytest

import triparty as tp
from triparty.mechanism import Agent, MarketInstance


@pytest.fixture(scope="session")
def example1():
    """Two agents, binary outcome worth 4 on success with probability 1/2,
    i.i.d. uniform [0,1] costs; contributions are uniform on [1,2]."""
    return MarketInstance(
        [4.0, 0.0],
        [Agent((0.5, 0.5), tp.make_uniform(0.0, 1.0)),
         Agent((0.5, 0.5), tp.make_uniform(0.0, 1.0))])


@pytest.fixture(scope="session")
def u12():
    return tp.make_uniform(1.0, 2.0)


@pytest.fixture(scope="session")
def ter14():
    return tp.make_trunc_equal_revenue(1.0, 4.0)


def random_regular_dist(rng):
    """A contribution distribution from the regular families."""
    kind = rng.integers(0, 4)
    if kind == 0:
        a = rng.uniform(0.1, 2.0)
        return tp.make_uniform(a, a + rng.uniform(0.3, 3.0))
    if kind == 1:
        rs = rng.uniform(0.5, 2.0)
        return tp.make_trunc_equal_revenue(rs, rs * rng.uniform(1.0, 6.0))
    if kind == 2:
        a = rng.uniform(0.1, 1.0)
        base = tp.make_uniform(a, a + rng.uniform(0.3, 2.0))
        return tp.power(base, int(rng.integers(2, 4)))
    return tp.make_staircase(int(rng.integers(2, 8)))


def random_mhr_dist(rng):
    """A contribution distribution from the MHR families (negative support
    allowed)."""
    kind = rng.integers(0, 3)
    if kind == 0:
        a = rng.uniform(-0.5, 2.0)
        return tp.make_uniform(a, a + rng.uniform(0.3, 3.0))
    if kind == 1:
        a = rng.uniform(0.1, 1.0)
        base = tp.make_uniform(a, a + rng.uniform(0.3, 2.0))
        return tp.power(base, int(rng.integers(2, 4)))
    return tp.make_cond_exponential(rng.uniform(2.0, 12.0),
                                    rng.uniform(1.2, 5.0))


def random_positive_regular_dist(rng):
    d = random_regular_dist(rng)
    while d.support_lo < 0.0:
        d = random_regular_dist(rng)
    return d


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
