import numpy as np
import pytest

from wiener_cpe import build_qam, shape_for_entropy


@pytest.fixture(scope="session")
def qpsk():
    return build_qam(4)


@pytest.fixture(scope="session")
def qam64():
    return build_qam(64)


@pytest.fixture(scope="session")
def shaped64(qam64):
    constellation, _ = shape_for_entropy(qam64, 5.0)
    return constellation


def assert_prob_vector(p, tol=1e-12):
    p = np.asarray(p)
    assert np.all(p >= 0)
    assert abs(p.sum() - 1.0) <= tol
