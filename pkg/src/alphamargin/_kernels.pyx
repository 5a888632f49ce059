# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled backend for the alpha-softargmax solver.

Same bracketing and termination rules as alphamargin._fallback, written as a
tight C loop so that batched training and the acceptance sweeps stay fast.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport fabs, pow

from .errors import SolverError

cnp.import_array()

DEF RESIDUAL_TOL = 1e-12

# status codes reported back to Python
DEF ST_OK = 0
DEF ST_BAD_BRACKET = 1
DEF ST_NO_CONVERGE = 2


cdef double _residual(const double* th, const double* q, Py_ssize_t k,
                      double tau, double am1, double inv_am1) noexcept nogil:
    cdef Py_ssize_t j
    cdef double s = 0.0
    cdef double z
    for j in range(k):
        z = 1.0 + am1 * (th[j] - tau)
        if z > 0.0:
            s += q[j] * pow(z, inv_am1)
    return s - 1.0


cdef int _solve_one(const double* th, const double* q, Py_ssize_t k,
                    double alpha, double tol, int max_iters,
                    double* tau_out) noexcept nogil:
    cdef double am1 = alpha - 1.0
    cdef double inv_am1 = 1.0 / am1
    cdef Py_ssize_t j, t = 0
    cdef double qsum = 0.0
    for j in range(k):
        if th[j] > th[t]:
            t = j
        qsum += q[j]
    # f'(u) = (u**(alpha-1) - 1) / (alpha - 1)
    cdef double lo = th[t] - (pow(1.0 / q[t], am1) - 1.0) * inv_am1
    cdef double hi = th[t] - (pow(1.0 / qsum, am1) - 1.0) * inv_am1
    if lo == hi:
        tau_out[0] = lo
        return ST_OK

    cdef double r_lo = _residual(th, q, k, lo, am1, inv_am1)
    cdef double r_hi = _residual(th, q, k, hi, am1, inv_am1)
    # nonincreasing residual: a valid bracket has r_lo >= 0 >= r_hi
    if r_lo < -1e-9 or r_hi > 1e-9:
        return ST_BAD_BRACKET
    if fabs(r_lo) <= RESIDUAL_TOL:
        tau_out[0] = lo
        return ST_OK
    if fabs(r_hi) <= RESIDUAL_TOL:
        tau_out[0] = hi
        return ST_OK

    cdef double mid, r
    cdef int it
    for it in range(max_iters):
        mid = 0.5 * (lo + hi)
        r = _residual(th, q, k, mid, am1, inv_am1)
        if fabs(r) <= RESIDUAL_TOL:
            tau_out[0] = mid
            return ST_OK
        if r > 0.0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= tol:
            tau_out[0] = 0.5 * (lo + hi)
            return ST_OK
    return ST_NO_CONVERGE


cdef _raise(int status, double tol, int max_iters):
    if status == ST_BAD_BRACKET:
        raise SolverError(
            "bracket residuals have the same sign; upstream invariant violated")
    raise SolverError(
        f"bisection did not converge in {max_iters} iterations to width {tol:.3e}")


def solve_tau(theta, q, double alpha, double tol, int max_iters):
    cdef cnp.ndarray[cnp.float64_t, ndim=1] th = np.ascontiguousarray(theta, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] qq = np.ascontiguousarray(q, dtype=np.float64)
    cdef double tau = 0.0
    cdef int status = _solve_one(&th[0], &qq[0], th.shape[0], alpha, tol, max_iters, &tau)
    if status != ST_OK:
        _raise(status, tol, max_iters)
    return tau


def posterior(theta, q, double alpha, double tol, int max_iters):
    P, taus = posterior_batch(np.atleast_2d(theta), np.atleast_2d(q), alpha, tol, max_iters)
    return P[0], float(taus[0])


def posterior_batch(theta, q, double alpha, double tol, int max_iters):
    cdef cnp.ndarray[cnp.float64_t, ndim=2] th = np.ascontiguousarray(theta, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] qq = np.ascontiguousarray(q, dtype=np.float64)
    cdef Py_ssize_t B = th.shape[0]
    cdef Py_ssize_t k = th.shape[1]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] P = np.empty((B, k), dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] taus = np.empty(B, dtype=np.float64)
    cdef double am1 = alpha - 1.0
    cdef double inv_am1 = 1.0 / am1
    cdef Py_ssize_t i, j
    cdef double tau, z
    cdef int status = ST_OK
    with nogil:
        for i in range(B):
            status = _solve_one(&th[i, 0], &qq[i, 0], k, alpha, tol, max_iters, &tau)
            if status != ST_OK:
                break
            taus[i] = tau
            for j in range(k):
                z = 1.0 + am1 * (th[i, j] - tau)
                P[i, j] = qq[i, j] * pow(z, inv_am1) if z > 0.0 else 0.0
    if status != ST_OK:
        _raise(status, tol, max_iters)
    return P, taus
