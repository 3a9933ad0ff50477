import numpy as np
import pytest
from hypothesis import HealthCheck, settings, strategies as st

from drot import GaussianSpec, TransportProblem, gen_gaussian_problem

# Compiled kernels make the first example of a run slow; deadlines only add noise.
settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def random_problem(m, n, seed, dirichlet=None):
    return gen_gaussian_problem(GaussianSpec(m=m, n=n, seed=seed, dirichlet=dirichlet))


@st.composite
def small_problems(draw, max_m=8, max_n=8, min_dim=1):
    m = draw(st.integers(min_dim, max_m))
    n = draw(st.integers(min_dim, max_n))
    seed = draw(st.integers(0, 2**32 - 1))
    dirichlet = draw(st.sampled_from([None, 1.0]))
    return random_problem(m, n, seed, dirichlet)


@pytest.fixture
def swap2():
    """C=[[0,1],[1,0]] with p=(0.7,0.3), q=(0.4,0.6); optimal cost 0.3."""
    return TransportProblem(np.array([[0.0, 1.0], [1.0, 0.0]]), np.array([0.7, 0.3]), np.array([0.4, 0.6]))


@pytest.fixture
def sym2():
    return TransportProblem(np.array([[0.0, 1.0], [1.0, 0.0]]), np.array([0.5, 0.5]), np.array([0.5, 0.5]))
