import numpy as np
import pytest

from mdot import Marginals
from mdot.core import ScaledPlan
from mdot.mirror import initial_log_base


def random_marginals(rng, n):
    r = rng.dirichlet(np.ones(n)) + 1e-3
    c = rng.dirichlet(np.ones(n)) + 1e-3
    return Marginals(r / r.sum(), c / c.sum())


def random_plan(rng, n, gamma=4.0, scale=0.5):
    m = random_marginals(rng, n)
    C = rng.random((n, n))
    plan = ScaledPlan(initial_log_base(m) - gamma * C,
                      rng.normal(scale=scale, size=n), rng.normal(scale=scale, size=n), gamma)
    return plan, m, C


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)
