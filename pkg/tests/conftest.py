import numpy as np
import pytest


def fd_gradient(fn, x, h=1e-5):
    """Central finite-difference gradient of a scalar function of an array."""
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        hi = fn(x)
        flat[i] = orig - h
        lo = fn(x)
        flat[i] = orig
        gf[i] = (hi - lo) / (2.0 * h)
    return g


def assert_grad_close(analytic, numeric, rtol=1e-4, atol=1e-9):
    """Max-norm relative comparison of an analytic gradient against FD."""
    analytic = np.asarray(analytic, dtype=float)
    numeric = np.asarray(numeric, dtype=float)
    scale = max(np.abs(numeric).max(), np.abs(analytic).max(), atol)
    err = np.abs(analytic - numeric).max() / scale
    assert err < rtol, f"gradient mismatch: rel err {err:.3e} (scale {scale:.3e})"


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
