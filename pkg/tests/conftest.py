import numpy as np
import pytest

from gyrocal.geometry import so3_exp
from gyrocal.preprocess import AlignedPairs


def random_rotation(rng, min_entry=0.0):
    """Random rotation, optionally rejecting matrices with near-zero entries."""
    while True:
        C = so3_exp(rng.uniform(-np.pi, np.pi, size=3))
        if np.min(np.abs(C)) >= min_entry:
            return C


def pairs_from_model(A, w2, t=None):
    """Noiseless pairs satisfying w1 = A w2 exactly."""
    w2 = np.asarray(w2, float)
    if t is None:
        t = np.arange(len(w2)) / 100.0
    return AlignedPairs(t=t, w1=w2 @ np.asarray(A, float).T, w2=w2)


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
