import math

import numpy as np
import pytest

from nsrlab.fieldlab import FieldStack, Grid, make_grid
from nsrlab.genflow import FlowSpec, generate

TWO_PI = 2 * math.pi


@pytest.fixture(scope="session")
def abc64():
    """Unit-amplitude ABC, N=64, t in [0, 4]."""
    return generate(FlowSpec("abc", nu=0.1), make_grid(64, 41, TWO_PI, 0.1))


@pytest.fixture(scope="session")
def abc32():
    return generate(FlowSpec("abc", nu=0.1), make_grid(32, 41, TWO_PI, 0.1))


@pytest.fixture(scope="session")
def calm_abc64():
    """ABC at amplitude 0.02, i.e. Reynolds number about 1.3 on the 2 pi box."""
    return generate(FlowSpec("abc", A=0.02, B=0.02, C=0.02, nu=0.1),
                    make_grid(64, 41, TWO_PI, 0.1))


@pytest.fixture(scope="session")
def mock64():
    g = make_grid(64, 41, TWO_PI, 0.1)
    return generate(FlowSpec("homogeneous_minus_one", r_moll=2.1 * g.h), g)


@pytest.fixture
def zero_stack():
    g = Grid.cube(16, 12, TWO_PI, 0.25)
    u = np.zeros((g.nt, 3) + g.shape)
    return FieldStack(g, u, np.zeros((g.nt,) + g.shape), meta={"family": "zero"})


def constant_stack(c, n=16, nt=12, length=TWO_PI, dt=0.25, p=None):
    g = Grid.cube(n, nt, length, dt)
    u = np.broadcast_to(np.asarray(c, float)[None, :, None, None, None], (g.nt, 3) + g.shape)
    pr = None if p is None else np.full((g.nt,) + g.shape, float(p))
    return FieldStack(g, u, pr)
