import numpy as np
import pytest

from mtlsi.numerics import precision


@pytest.fixture
def f64():
    with precision("f64"):
        yield


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def t64(a, grad=False):
    from mtlsi.numerics import Param, Tensor

    a = np.asarray(a, dtype=np.float64)
    return Param(a, dtype=np.float64) if grad else Tensor(a)


def rel(a, b):
    a, b = np.asarray(getattr(a, "data", a)), np.asarray(getattr(b, "data", b))
    return float(np.abs(a - b).max() / max(np.abs(b).max(), 1e-300))
