import numpy as np
import pytest

from srlfi.networks import make_generator


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_generator():
    """2-layer generator for 1D parameters conditioned on 1D data."""
    return make_generator(1, 1, hidden=(8,), activation="tanh", seed=3)
