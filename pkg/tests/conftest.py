import numpy as np
import pytest

from dirichlet_mc import derive_substream, make_preset


@pytest.fixture(scope="session")
def gauss():
    return make_preset("gauss_const_sigma")


@pytest.fixture(scope="session")
def gauss_ext(gauss):
    return gauss.sample_extended(100_000, derive_substream(11, 0, 0))


@pytest.fixture(scope="session")
def mc_identity():
    return make_preset("mc_identity")


@pytest.fixture(scope="session")
def poisson():
    return make_preset("poisson_interval")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
