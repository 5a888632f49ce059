"""Backend selection: compiled extension when available, numpy fallback otherwise."""

from . import _fallback

try:
    from . import _kernels as _compiled

    HAVE_COMPILED = True
except ImportError:  # extension not built
    _compiled = None
    HAVE_COMPILED = False

_active = _compiled if HAVE_COMPILED else _fallback
BACKEND = "compiled" if HAVE_COMPILED else "python"

solve_tau = _active.solve_tau
posterior = _active.posterior
posterior_batch = _active.posterior_batch


def get_backend(name):
    """Return the backend module by name ('compiled' or 'python')."""
    if name == "python":
        return _fallback
    if name == "compiled":
        if not HAVE_COMPILED:
            raise RuntimeError("compiled backend is not available")
        return _compiled
    raise ValueError(f"unknown backend {name!r}")
