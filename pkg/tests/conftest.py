import numpy as np
import pytest

from gradquant.problems import QuadraticProblem


@pytest.fixture(scope="session")
def quadratic():
    return QuadraticProblem()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
