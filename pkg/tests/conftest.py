import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from flicker.he import make_backend
from flicker.he.params import default_params, toy_params

settings.register_profile(
    "flicker",
    deadline=None,
    max_examples=40,
    suppress_health_check=[HealthCheck.function_scoped_fixture, HealthCheck.too_slow],
)
settings.load_profile("flicker")

D1 = [[10, 500, 700, 4000], [20, 700, 500, 3000], [30, 40, 600, 3000], [100, 50, 200, 10]]


@pytest.fixture(scope="session")
def toy():
    return toy_params()


@pytest.fixture(scope="session")
def default():
    return default_params()


@pytest.fixture(scope="session")
def toy_ckks(toy):
    be = make_backend("ckks", toy, seed=1)
    return be, be.keygen(7)


@pytest.fixture(scope="session")
def default_ckks(default):
    be = make_backend("ckks", default, seed=1)
    return be, be.keygen(7, rotation_steps=[1, 2, 4, -1])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
