import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_antisym(rng, d, scale=1.0):
    M = rng.normal(size=(d, d)) * scale
    return M - M.T
