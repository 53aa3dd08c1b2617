import math

import numpy as np
import pytest

from explosive_she.integrator import FieldState

TWO_PI = 2 * math.pi


@pytest.fixture
def grid_x():
    def make(n):
        return -math.pi + (np.arange(n) + 0.5) * (TWO_PI / n)

    return make


def constant_state(c, n=64):
    return FieldState(np.full(n, float(c)))
