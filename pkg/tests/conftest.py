import numpy as np
import pytest
from hypothesis import settings

from gansim.tensor import reset_tape

settings.register_profile("ci", max_examples=25, deadline=None, derandomize=True)
settings.load_profile("ci")


@pytest.fixture(autouse=True)
def clean_tape():
    reset_tape()
    yield
    reset_tape()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
