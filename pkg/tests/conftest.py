import numpy as np
import pytest


def sparsemax_oracle(z):
    """Sort-based Euclidean projection of z onto the probability simplex."""
    z = np.asarray(z, dtype=np.float64)
    u = np.sort(z)[::-1]
    css = np.cumsum(u)
    ranks = np.arange(1, len(u) + 1)
    rho = np.nonzero(u + (1.0 - css) / ranks > 0)[0][-1]
    tau = (css[rho] - 1.0) / (rho + 1.0)
    return np.maximum(z - tau, 0.0)


def softargmax_oracle(theta, q):
    """Closed-form exponential softargmax with reference measure q."""
    theta = np.asarray(theta, dtype=np.float64)
    w = q * np.exp(theta - theta.max())
    return w / w.sum()


def cross_entropy_oracle(theta, y):
    z = theta - theta.max()
    return float(np.log(np.exp(z).sum()) - z[y])


def central_diff(fn, x, i, h=1e-5):
    xp = np.array(x, dtype=np.float64)
    xm = np.array(x, dtype=np.float64)
    xp[i] += h
    xm[i] -= h
    return (fn(xp) - fn(xm)) / (2.0 * h)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
