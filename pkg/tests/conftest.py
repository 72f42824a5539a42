"""Shared fixtures for the roaflow test suite."""

import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(os.path.abspath(__file__)), '..', 'src'))

import numpy as np  # noqa: E402
import pytest  # noqa: E402

from evaluation_pool import EvaluationPool  # noqa: E402
from integrator import integrate  # noqa: E402
from systems import linear_field, system_registry  # noqa: E402

DIAG = np.array([[-1.0, 0.0], [0.0, -2.0]])


@pytest.fixture
def registry():
    return system_registry


@pytest.fixture
def vdp():
    return system_registry.get('vdp_reverse')


@pytest.fixture
def diag_field():
    """x' = diag(-1, -2) x."""
    return linear_field(DIAG, 'linear:diag')


@pytest.fixture
def diag_trajectory(diag_field):
    return integrate(diag_field, [1.0, 1.0], 4.0, dt=0.1)


@pytest.fixture
def vdp_trajectory(vdp):
    return integrate(vdp, [0.5, 0.5], 4.0, dt=0.1)


@pytest.fixture
def pool():
    with EvaluationPool(threads=2) as p:
        yield p


def random_hurwitz(rng, n):
    """Skew part plus a negative definite symmetric part; always Hurwitz."""
    m = rng.standard_normal((n, n))
    skew = (m - m.T) / 2.0
    p = rng.standard_normal((n, n))
    return skew - (p @ p.T + 0.5 * np.eye(n))
