import numpy as np
import pytest

from occupancy_tp.weights import make_explicit, make_zeta


@pytest.fixture
def four_box():
    return make_explicit([0.5, 0.3, 0.15, 0.05])


@pytest.fixture
def three_box():
    return make_explicit([0.5, 0.3, 0.2])


@pytest.fixture(scope="session")
def zeta2():
    return make_zeta(2.0)


def power_model(J, a=1.5):
    p = np.arange(1, J + 1, dtype=float) ** -a
    return make_explicit(p / p.sum())


@pytest.fixture(scope="session")
def model200():
    return power_model(200)
