import numpy as np
import pytest

from alphamargin import backend
from alphamargin.errors import SolverError


@pytest.mark.skipif(not backend.HAVE_COMPILED, reason="compiled extension not built")
class TestBackendParity:
    def test_solve_tau_agrees(self, rng):
        compiled = backend.get_backend("compiled")
        python = backend.get_backend("python")
        for _ in range(100):
            k = int(rng.integers(2, 80))
            theta = rng.uniform(-10, 10, k)
            q = rng.uniform(0.05, 1.0, k)
            alpha = float(rng.choice([1.1, 1.25, 1.5, 2.0]))
            t_c = compiled.solve_tau(theta, q, alpha, 1e-10, 200)
            t_p = python.solve_tau(theta, q, alpha, 1e-10, 200)
            assert t_c == pytest.approx(t_p, abs=1e-9)

    def test_posterior_batch_agrees(self, rng):
        compiled = backend.get_backend("compiled")
        python = backend.get_backend("python")
        theta = rng.uniform(-8, 8, (32, 40))
        q = rng.uniform(0.1, 1.0, (32, 40))
        for alpha in (1.25, 2.0):
            P_c, tau_c = compiled.posterior_batch(theta, q, alpha, 1e-10, 200)
            P_p, tau_p = python.posterior_batch(theta, q, alpha, 1e-10, 200)
            np.testing.assert_allclose(P_c, P_p, atol=1e-9)
            np.testing.assert_allclose(tau_c, tau_p, atol=1e-9)
            # identical zero pattern: exact zeros, no epsilon pruning
            np.testing.assert_array_equal(P_c == 0.0, P_p == 0.0)

    def test_both_raise_on_exhausted_iterations(self):
        theta = np.array([1.0, 0.9, 0.8])
        q = np.array([1.0, 1.0, 1.0])
        for name in ("compiled", "python"):
            with pytest.raises(SolverError):
                backend.get_backend(name).solve_tau(theta, q, 1.5, 1e-14, 3)


def test_active_backend_exposed():
    assert backend.BACKEND in ("compiled", "python")
