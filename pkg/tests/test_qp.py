import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hydrofuse.errors import OptimizationError
from hydrofuse.qp import kkt_residuals, solve_qp

KKT_TOL = 1e-7


def enumerate_active_sets(H, g, A, b):
    """Optimum of a strictly convex QP by trying every active set (small problems only)."""
    n, m = H.shape[0], A.shape[0]
    best, best_val = None, np.inf
    for size in range(0, min(n, m) + 1):
        for W in itertools.combinations(range(m), size):
            W = list(W)
            Aw = A[W]
            K = np.block([[H, Aw.T], [Aw, np.zeros((size, size))]])
            try:
                sol = np.linalg.solve(K, np.concatenate([-g, b[W]]))
            except np.linalg.LinAlgError:
                continue
            x, lam = sol[:n], sol[n:]
            if np.any(A @ x - b > 1e-9) or np.any(lam < -1e-9):
                continue
            val = 0.5 * x @ H @ x + g @ x
            if val < best_val:
                best, best_val = x, val
    return best


@st.composite
def small_qps(draw):
    n = draw(st.integers(1, 4))
    m = draw(st.integers(0, 5))
    seed = draw(st.integers(0, 2**31 - 1))
    rng = np.random.default_rng(seed)
    L = rng.normal(size=(n, n))
    H = L @ L.T + 0.1 * np.eye(n)
    g = rng.normal(size=n) * 3
    A = rng.normal(size=(m, n))
    b = rng.uniform(0.0, 1.0, m)  # origin is feasible
    return H, g, A, b


class TestActiveSet:
    def test_unconstrained(self):
        H = np.array([[2.0, 0.0], [0.0, 4.0]])
        res = solve_qp(H, [-2.0, -4.0], np.zeros((0, 2)), [], [0.0, 0.0])
        np.testing.assert_allclose(res.x, [1.0, 1.0])

    def test_single_active_bound(self):
        # min (x-2)^2 s.t. x <= 1
        res = solve_qp([[2.0]], [-4.0], [[1.0]], [1.0], [0.0])
        assert res.x[0] == pytest.approx(1.0)
        assert res.multipliers[0] == pytest.approx(2.0)
        assert res.active == [0]

    def test_infeasible_start(self):
        with pytest.raises(OptimizationError, match="infeasible"):
            solve_qp([[1.0]], [0.0], [[1.0]], [0.0], [1.0])

    def test_iteration_limit(self):
        with pytest.raises(OptimizationError):
            solve_qp(np.eye(2), [-5.0, -5.0], np.eye(2), [1.0, 1.0], [0.0, 0.0], max_iter=1)

    @settings(max_examples=60, deadline=None)
    @given(small_qps())
    def test_matches_enumeration(self, qp):
        H, g, A, b = qp
        res = solve_qp(H, g, A, b, np.zeros(H.shape[0]))
        np.testing.assert_allclose(res.x, enumerate_active_sets(H, g, A, b), atol=1e-8)
        kkt = kkt_residuals(H, g, A, b, res.x, res.multipliers)
        assert max(kkt.values()) < KKT_TOL

    @settings(max_examples=40, deadline=None)
    @given(small_qps())
    def test_objective_never_increases(self, qp):
        H, g, A, b = qp
        trace = solve_qp(H, g, A, b, np.zeros(H.shape[0])).objective_trace
        assert all(b2 <= a2 + 1e-12 * max(1.0, abs(a2)) for a2, b2 in zip(trace, trace[1:]))


class TestKktResiduals:
    def test_optimal_point_is_clean(self):
        res = kkt_residuals(np.array([[2.0]]), np.array([-4.0]), np.array([[1.0]]), np.array([1.0]),
                            np.array([1.0]), np.array([2.0]))
        assert all(v == 0.0 for v in res.values())

    def test_each_residual_detected(self):
        H, g, A, b = np.array([[2.0]]), np.array([-4.0]), np.array([[1.0]]), np.array([1.0])
        assert kkt_residuals(H, g, A, b, np.array([2.0]), np.array([0.0]))["primal"] == pytest.approx(1.0)
        assert kkt_residuals(H, g, A, b, np.array([1.0]), np.array([-1.0]))["dual"] == pytest.approx(1.0)
        assert kkt_residuals(H, g, A, b, np.array([0.0]), np.array([1.0]))["complementarity"] == pytest.approx(1.0)
        assert kkt_residuals(H, g, A, b, np.array([0.0]), np.array([0.0]))["stationarity"] == pytest.approx(4.0)
