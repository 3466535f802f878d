import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


def random_image(rng, height, width, low=0.0, high=1.0):
    return rng.uniform(low, high, size=(height, width, 3))
