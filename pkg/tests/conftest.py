import numpy as np
import pytest

from hmcecs.control_variates import build_cache
from hmcecs.model import LogisticModel, Prior, generate_synthetic

THETA_TRUE = np.array([1.0, -0.5, 0.25, 0.0, 0.5])


@pytest.fixture(scope="session")
def logistic():
    return LogisticModel()


@pytest.fixture(scope="session")
def prior():
    return Prior(0.1)


@pytest.fixture(scope="session")
def small_data():
    """n=1000, d=5 synthetic logistic dataset shared across unit tests."""
    return generate_synthetic(1000, 5, THETA_TRUE, seed=42)


@pytest.fixture(scope="session")
def small_cache(logistic, small_data):
    """Control-variate cache centered away from the data-generating value so
    residuals are not degenerate."""
    theta_star = 0.5 * THETA_TRUE
    return build_cache(logistic, small_data, theta_star)


@pytest.fixture
def rng():
    return np.random.default_rng(2024)
