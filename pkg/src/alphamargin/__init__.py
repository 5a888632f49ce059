"""Margin-based alpha-divergence losses with a bisection alpha-softargmax solver."""

from .backend import BACKEND, HAVE_COMPILED
from .core import (
    AlphaParams,
    PosteriorDistribution,
    SolverError,
    alpha_softargmax,
    alpha_softmax,
    divergence,
    f_conj_prime,
    f_prime,
    f_value,
    root_find_tau,
)

__version__ = "0.1.0"
