import numpy as np
import pytest

from cstarbimod import make_algebra


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def C2():
    return make_algebra(["x", "y"])


@pytest.fixture
def C3():
    return make_algebra(["p", "q", "r"])


def random_unitary(n, rng):
    Z = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    Q, R = np.linalg.qr(Z)
    return Q * (np.diag(R) / np.abs(np.diag(R)))
