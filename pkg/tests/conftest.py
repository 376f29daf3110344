import numpy as np
import pytest

from gsplab.numerics import Rng


@pytest.fixture
def rng():
    return Rng(20240817)


def random_symmetric(rng, n, scale=1.0):
    a = rng.normal((n, n)) * scale
    return 0.5 * (a + a.T)
