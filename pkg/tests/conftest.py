import numpy as np
import pytest
from hypothesis import settings

from conicbound.model import SystemModel

settings.register_profile("default", deadline=None, max_examples=40, derandomize=True)
settings.load_profile("default")


def scalar_model(A=-1.0, E=1.0, G=1.0, C=1.0, D=0.0) -> SystemModel:
    return SystemModel([[A]], [[E]], [[G]], [[C]], [[D]])


def two_state_model(D=0.0) -> SystemModel:
    return SystemModel([[0, 1], [-2, -3]], [[0], [1]], [[0], [1]], [[1, 0]], [[D]])


def random_stable_model(rng: np.random.Generator, n=None, n_p=None, n_w=None, D_scale=0.0) -> SystemModel:
    """Hurwitz A (shifted spectrum) with small random input/output maps."""
    n = n or int(rng.integers(1, 4))
    n_p = n_p or int(rng.integers(1, 3))
    n_w = n_w or int(rng.integers(1, 3))
    A = rng.standard_normal((n, n))
    A -= (np.max(np.linalg.eigvals(A).real) + rng.uniform(0.5, 2.0)) * np.eye(n)
    E = rng.standard_normal((n, n_p)) * 0.5
    G = rng.standard_normal((n, n_w)) * 0.5
    C = rng.standard_normal((n_p, n)) * 0.5
    D = rng.standard_normal((n_p, n_p)) * D_scale
    return SystemModel(A, E, G, C, D)


@pytest.fixture
def scalar():
    return scalar_model()


@pytest.fixture
def two_state():
    return two_state_model()
