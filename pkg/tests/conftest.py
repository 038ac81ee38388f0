import numpy as np
import pytest

from bellnet.environments import GridSpec, build_cliff_mdp
from bellnet.mdp import random_mdp
from bellnet.solvers import optimal_q


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_mdp(rng):
    return random_mdp(3, 2, 0.9, rng)


@pytest.fixture(scope="session")
def cliff():
    spec = GridSpec()
    mdp = build_cliff_mdp(spec, 0.99)
    return spec, mdp, optimal_q(mdp)


def random_policy(rng, S, A):
    return rng.dirichlet(np.ones(A), size=S)
