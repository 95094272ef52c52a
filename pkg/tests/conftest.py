import numpy as np
import pytest

from stochgan import autodiff as ad


@pytest.fixture(autouse=True)
def f64_mode():
    with ad.precision("f64"):
        yield


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
