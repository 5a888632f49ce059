"""Alpha-divergence kernel: generator functions, divergence values, the tau
root-finder and the alpha-softargmax / alpha-softmax pair.

Conventions: alpha-softmax is the value of the regularized maximization
max_p <p, theta> - D_f(p : q) over the simplex, and alpha-softargmax is its
gradient, the (possibly sparse) posterior probability map. All arithmetic is
double precision; an entry of the posterior is zero iff the clip in the
closed form evaluates to exactly zero.
"""

from dataclasses import dataclass, field

import numpy as np

from . import backend
from .errors import SolverError

__all__ = [
    "AlphaParams",
    "PosteriorDistribution",
    "SolverError",
    "f_value",
    "f_prime",
    "f_conj_prime",
    "divergence",
    "root_find_tau",
    "alpha_softargmax",
    "alpha_softmax",
]


@dataclass(frozen=True)
class AlphaParams:
    """Divergence index alpha (> 1) and bisection tolerances."""

    alpha: float
    bisect_tol: float = 1e-10
    max_iters: int = 200

    def __post_init__(self):
        if not np.isfinite(self.alpha) or self.alpha <= 1.0:
            raise ValueError(f"alpha must be finite and > 1, got {self.alpha}")
        if not self.bisect_tol > 0.0:
            raise ValueError(f"bisect_tol must be > 0, got {self.bisect_tol}")
        if self.max_iters < 1:
            raise ValueError(f"max_iters must be >= 1, got {self.max_iters}")


@dataclass(frozen=True)
class PosteriorDistribution:
    """Sparse probability vector: the nonzero entries of an alpha-softargmax."""

    indices: np.ndarray
    probs: np.ndarray
    k: int = field(default=0)

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64)
        pr = np.asarray(self.probs, dtype=np.float64)
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "probs", pr)
        if idx.shape != pr.shape or idx.ndim != 1:
            raise ValueError("indices and probs must be 1-D arrays of equal length")
        if len(np.unique(idx)) != len(idx):
            raise ValueError("support indices must be unique")
        if len(idx) and (idx.min() < 0 or idx.max() >= self.k):
            raise ValueError("support index out of range")
        if np.any(pr <= 0.0):
            raise ValueError("support probabilities must be strictly positive")
        if abs(pr.sum() - 1.0) > 1e-8:
            raise ValueError(f"probabilities sum to {pr.sum()!r}, expected 1")

    @classmethod
    def from_dense(cls, p):
        p = np.asarray(p, dtype=np.float64)
        nz = np.flatnonzero(p)
        return cls(indices=nz, probs=p[nz], k=p.shape[0])

    def to_dense(self):
        out = np.zeros(self.k)
        out[self.indices] = self.probs
        return out

    @property
    def nnz(self):
        return len(self.indices)

    def prob(self, j):
        """Probability of class j (0.0 when j is off-support)."""
        hit = np.flatnonzero(self.indices == j)
        return float(self.probs[hit[0]]) if len(hit) else 0.0


def _check_logits(theta):
    theta = np.asarray(theta, dtype=np.float64)
    if theta.ndim != 1 or theta.shape[0] < 2:
        raise ValueError("logits must be a 1-D vector with k >= 2")
    if not np.all(np.isfinite(theta)):
        raise ValueError("logits must be finite")
    return theta


def _check_measure(q, k=None):
    q = np.asarray(q, dtype=np.float64)
    if q.ndim != 1:
        raise ValueError("reference measure must be a 1-D vector")
    if not np.all(np.isfinite(q)) or np.any(q <= 0.0):
        raise ValueError("reference measure weights must be finite and > 0")
    if k is not None and q.shape[0] != k:
        raise ValueError(f"dimension mismatch: {q.shape[0]} weights for k={k} logits")
    return q


def f_value(u, params):
    """Generator f(u) = ((u**a - 1) - a*(u - 1)) / (a*(a - 1)) for u >= 0."""
    a = params.alpha
    u = np.asarray(u, dtype=np.float64)
    if np.any(u < 0.0):
        raise ValueError("f is only defined for u >= 0")
    val = ((u**a - 1.0) - a * (u - 1.0)) / (a * (a - 1.0))
    return float(val) if val.ndim == 0 else val


def f_prime(u, params):
    """Derivative f'(u) = (u**(a-1) - 1) / (a-1); strictly increasing."""
    a = params.alpha
    u = np.asarray(u, dtype=np.float64)
    if np.any(u < 0.0) or (a < 2.0 and np.any(u == 0.0)):
        raise ValueError("f' requires u > 0 (u = 0 is allowed only for alpha >= 2)")
    val = (u ** (a - 1.0) - 1.0) / (a - 1.0)
    return float(val) if val.ndim == 0 else val


def f_conj_prime(v, params):
    """Derivative of the convex conjugate: [1 + (a-1)*v]_+ ** (1/(a-1))."""
    a = params.alpha
    v = np.asarray(v, dtype=np.float64)
    z = 1.0 + (a - 1.0) * v
    out = np.zeros_like(z)
    pos = z > 0.0
    out[pos] = z[pos] ** (1.0 / (a - 1.0))
    return float(out) if out.ndim == 0 else out


def divergence(p, q, params):
    """D_f(p : q) = sum_j q_j * f(p_j / q_j); nonnegative on the simplex."""
    if isinstance(p, PosteriorDistribution):
        p = p.to_dense()
    p = np.asarray(p, dtype=np.float64)
    q = _check_measure(q, k=p.shape[0])
    return float(np.sum(q * f_value(p / q, params)))


def root_find_tau(theta, q, params):
    """Normalizing shift tau* solving sum_j q_j * f_conj_prime(theta_j - tau) = 1.

    Bisection bracketed by [theta_t - f'(1/q_t), theta_t - f'(1/sum(q))] for
    t = argmax theta. Raises SolverError if the bracket is invalid or the
    iteration budget is exhausted before the bracket width reaches bisect_tol.
    """
    theta = _check_logits(theta)
    q = _check_measure(q, k=theta.shape[0])
    return float(backend.solve_tau(theta, q, params.alpha, params.bisect_tol, params.max_iters))


def alpha_softargmax(theta, q, params):
    """Sparse posterior p_j = q_j * [1 + (a-1)*(theta_j - tau*)]_+ ** (1/(a-1))."""
    theta = _check_logits(theta)
    q = _check_measure(q, k=theta.shape[0])
    p, _ = backend.posterior(theta, q, params.alpha, params.bisect_tol, params.max_iters)
    return PosteriorDistribution.from_dense(p)


def alpha_softmax(theta, q, params):
    """Value of the regularized maximization: <p*, theta> - D_f(p* : q)."""
    theta = _check_logits(theta)
    q = _check_measure(q, k=theta.shape[0])
    p, _ = backend.posterior(theta, q, params.alpha, params.bisect_tol, params.max_iters)
    return float(p @ theta - divergence(p, q, params))
