"""Dense primal active-set solver for strictly convex inequality-constrained QPs.

    minimize    0.5 x'Hx + g'x
    subject to  A x <= b

Iterates stay feasible and the objective never increases, which makes the
solver convenient to audit on small instances.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import OptimizationError


@dataclass
class QPResult:
    x: np.ndarray
    multipliers: np.ndarray
    active: list[int]
    iterations: int
    objective_trace: list[float] = field(default_factory=list)

    @property
    def objective(self) -> float:
        return self.objective_trace[-1]


def kkt_residuals(H, g, A, b, x, lam) -> dict[str, float]:
    """Stationarity, primal feasibility, dual feasibility and complementarity (max-abs)."""
    slack = b - A @ x
    return {
        "stationarity": float(np.max(np.abs(H @ x + g + A.T @ lam), initial=0.0)),
        "primal": float(np.max(np.maximum(-slack, 0.0), initial=0.0)),
        "dual": float(np.max(np.maximum(-lam, 0.0), initial=0.0)),
        "complementarity": float(np.max(np.abs(lam * slack), initial=0.0)),
    }


def _objective(H, g, x):
    return float(0.5 * x @ H @ x + g @ x)


def solve_qp(H, g, A, b, x0, *, max_iter: int | None = None, tol: float = 1e-12) -> QPResult:
    """Primal active-set method started from a feasible ``x0``.

    Raises OptimizationError when ``x0`` is infeasible or the iteration limit
    is hit.
    """
    H = np.asarray(H, dtype=float)
    g = np.asarray(g, dtype=float)
    A = np.asarray(A, dtype=float).reshape(-1, H.shape[0])
    b = np.asarray(b, dtype=float)
    x = np.asarray(x0, dtype=float).copy()
    nvar, ncon = H.shape[0], A.shape[0]
    scale = max(1.0, float(np.max(np.abs(b), initial=0.0)))
    feas_tol = 1e-10 * scale
    if np.any(A @ x - b > feas_tol):
        raise OptimizationError("starting point is infeasible")
    max_iter = max_iter if max_iter is not None else 10 * (nvar + ncon) + 50
    work: list[int] = []
    trace = [_objective(H, g, x)]
    lam = np.zeros(ncon)

    for it in range(1, max_iter + 1):
        k = len(work)
        Aw = A[work]
        K = np.zeros((nvar + k, nvar + k))
        K[:nvar, :nvar] = H
        K[:nvar, nvar:] = Aw.T
        K[nvar:, :nvar] = Aw
        rhs = np.concatenate([-(H @ x + g), np.zeros(k)])
        try:
            sol = np.linalg.solve(K, rhs)
        except np.linalg.LinAlgError as exc:
            raise OptimizationError("singular working-set KKT system") from exc
        p = sol[:nvar]
        mu = sol[nvar:]
        step_scale = max(1.0, float(np.max(np.abs(x))))
        if np.max(np.abs(p), initial=0.0) <= tol * step_scale:
            lam = np.zeros(ncon)
            lam[work] = mu
            if k == 0 or np.min(mu) >= -1e-14:
                lam = np.maximum(lam, 0.0)
                return QPResult(x, lam, sorted(work), it, trace)
            # drop the most negative multiplier
            work.pop(int(np.argmin(mu)))
            continue
        # ratio test over inactive constraints moving towards their bound
        Ap = A @ p
        candidates = Ap > 1e-15
        candidates[work] = False
        alpha, block = 1.0, None
        if np.any(candidates):
            idx = np.flatnonzero(candidates)
            ratios = np.maximum(b[idx] - A[idx] @ x, 0.0) / Ap[idx]
            j = int(np.argmin(ratios))  # first minimum: lowest index wins ties
            if ratios[j] < 1.0:
                alpha, block = float(ratios[j]), int(idx[j])
        x = x + alpha * p
        trace.append(_objective(H, g, x))
        if block is not None:
            work.append(block)
    raise OptimizationError(f"active-set QP did not converge in {max_iter} iterations")
