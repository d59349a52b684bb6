"""Numerical checks of the analytical properties behind the estimators.

Each check returns a :class:`ValidationOutcome`; none of them raise on a
failed property, so a battery of checks can be tabulated in one pass.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .filters import EstimatorConfig, GaussianBelief, kf_step
from .hydraulics import LeakScenario, NoiseSpec, generate_scenario
from .interpolation import (awgsi_weights, build_prediction_matrix, default_orientation, gsi_weights,
                            interpolate_heads)
from .network import NetworkModel, SensorLayout, build_structural

WOODBURY_TOL = 1e-10
SPECTRUM_TOL = 1e-9
BOUND_SLACK = 1e-9


@dataclass
class ValidationOutcome:
    check_name: str
    instance: dict
    observed: float
    bound: float
    passed: bool
    margin: float
    details: dict = field(default_factory=dict)

    def as_row(self) -> dict:
        row = {"check": self.check_name, "observed": self.observed, "bound": self.bound,
               "pass": self.passed, "margin": self.margin}
        row.update({f"instance.{k}": v for k, v in sorted(self.instance.items())})
        return row


def column_spread(A: np.ndarray) -> float:
    """Largest column range ``max_i a_ij - min_i a_ij``; zero iff all rows are equal."""
    return float(np.max(A.max(axis=0) - A.min(axis=0)))


def check_power_convergence(F, tol: float = 1e-8, max_k: int = 100_000, *,
                            instance: dict | None = None) -> ValidationOutcome:
    """First power ``k`` at which the rows of ``F^k`` agree to ``tol``.

    Also tracks how far ``F^k 1`` strays from ``1`` along the way.
    """
    F = np.asarray(F, dtype=float)
    n = F.shape[0]
    if np.any(F < 0) or np.max(np.abs(F.sum(axis=1) - 1.0)) > 1e-12:
        raise ValidationError("F must be row-stochastic")
    if np.allclose(F, np.eye(n)):
        raise ValidationError("F = I never mixes; epsilon must be below 1")
    P = F.copy()
    ones = np.ones(n)
    drift = 0.0
    spread = column_spread(P)
    k = 1
    while spread >= tol and k < max_k:
        P = P @ F
        k += 1
        spread = column_spread(P)
        drift = max(drift, float(np.max(np.abs(P @ ones - ones))))
    passed = spread < tol
    return ValidationOutcome("power_convergence", dict(instance or {}, n=n), spread, tol, passed,
                             tol - spread, {"k": k, "row_sum_drift": drift, "limit_row": P[0].copy()})


def woodbury_sides(P, S, R):
    """``(I - K S, (I + P S' R^-1 S)^-1)`` with ``K = P S' (S P S' + R)^-1``."""
    P = np.asarray(P, dtype=float)
    n = P.shape[0]
    S = np.asarray(S, dtype=float).reshape(-1, n)
    eye = np.eye(n)
    if S.shape[0] == 0:
        return eye, eye
    R = np.asarray(R, dtype=float)
    R = np.diag(R) if R.ndim == 1 else R
    K = np.linalg.solve(S @ P @ S.T + R, S @ P).T
    lhs = eye - K @ S
    rhs = np.linalg.inv(eye + P @ S.T @ np.linalg.inv(R) @ S)
    return lhs, rhs


def check_woodbury_gain(P, S, R, *, instance: dict | None = None) -> ValidationOutcome:
    lhs, rhs = woodbury_sides(P, S, R)
    err = float(np.max(np.abs(lhs - rhs)))
    return ValidationOutcome("woodbury_gain", dict(instance or {}, n=lhs.shape[0]), err, WOODBURY_TOL,
                             err < WOODBURY_TOL, WOODBURY_TOL - err)


def check_pd_product_spectrum(P, D, *, instance: dict | None = None) -> ValidationOutcome:
    """Smallest real part among the eigenvalues of ``P D`` (P PSD, D nonnegative diagonal)."""
    P = np.asarray(P, dtype=float)
    D = np.asarray(D, dtype=float)
    D = np.diag(D) if D.ndim == 1 else D
    if np.any(np.diag(D) < 0) or np.any(D - np.diag(np.diag(D))):
        raise ValidationError("D must be diagonal with nonnegative entries")
    eig = np.linalg.eigvals(P @ D)
    low = float(np.min(eig.real))
    return ValidationOutcome("pd_product_spectrum", dict(instance or {}, n=P.shape[0]), low, -SPECTRUM_TOL,
                             low >= -SPECTRUM_TOL, low + SPECTRUM_TOL,
                             {"max_imag": float(np.max(np.abs(eig.imag)))})


def check_subunitary_product(A, B, *, instance: dict | None = None, tol: float = 1e-12) -> ValidationOutcome:
    """``sigma_max(A B) < 1``; a product sitting on the unit boundary is flagged as a failure."""
    s = float(np.linalg.norm(np.asarray(A, float) @ np.asarray(B, float), 2))
    return ValidationOutcome("subunitary_product", dict(instance or {}), s, 1.0, s < 1.0 - tol, 1.0 - s)


def geometric_bound(sigma: float, k: int, e0: float, h_norm: float) -> float:
    """``sigma^(k-1) |e0| + (sigma + ... + sigma^k) |h|``, summed to stay valid at ``sigma = 1``."""
    powers = sigma ** np.arange(1, k + 1)
    return float(sigma ** (k - 1) * e0 + powers.sum() * h_norm)


@dataclass
class MonotoneErrorTrace:
    errors: list[float]
    sigma_mf: list[float]
    sigma_mi: list[float]


def linear_head_kf_trace(F, layout: SensorLayout, true_heads, h0, config: EstimatorConfig,
                         iterations: int) -> MonotoneErrorTrace:
    """Head-only linear KF on noiseless sensed heads, recording the error norm and the
    singular values of ``M_s F`` and ``M_s (I - F)`` at each iteration."""
    n = F.shape[0]
    S = layout.S(n)
    h = np.asarray(true_heads, dtype=float)
    y = S @ h
    Q = config.q_h * np.eye(n)
    R = config.r_h * np.eye(S.shape[0])
    R_inv = np.eye(S.shape[0]) / config.r_h
    eye = np.eye(n)
    belief = GaussianBelief(np.asarray(h0, dtype=float), config.p0_h * eye)
    errors = [float(np.linalg.norm(h - belief.mean))]
    s_mf, s_mi = [], []
    for _ in range(iterations):
        P_prior = F @ belief.cov @ F.T + Q
        M = np.linalg.inv(eye + P_prior @ S.T @ R_inv @ S)
        s_mf.append(float(np.linalg.norm(M @ F, 2)))
        s_mi.append(float(np.linalg.norm(M @ (eye - F), 2)))
        belief = kf_step(belief, F, None, None, Q, S, R, y)
        errors.append(float(np.linalg.norm(h - belief.mean)))
    return MonotoneErrorTrace(errors, s_mf, s_mi)


def check_monotone_error(network: NetworkModel, layout: SensorLayout, config: EstimatorConfig,
                         scenario: LeakScenario, *, iterations: int = 200,
                         instance: dict | None = None) -> ValidationOutcome:
    """Check the per-iteration geometric bound on the error of the head-only linear KF.

    The initial state is the GSI reconstruction, the prediction matrix uses
    AW-GSI weights, and ``sigma_bar`` is the largest singular value of
    ``M_s F`` and ``M_s (I - F)`` seen during the run.
    """
    st = build_structural(network)
    state, meas = generate_scenario(network, layout, scenario, NoiseSpec(), structural=st)
    B = default_orientation(network)
    h_gsi = interpolate_heads(gsi_weights(st), layout, meas.heads, zeta=config.zeta, orientation=B).heads
    eps = config.epsilon if config.epsilon is not None else layout.n_c / network.n
    F = build_prediction_matrix(awgsi_weights(st, h_gsi), eps).F
    trace = linear_head_kf_trace(F, layout, state.heads, h_gsi, config, iterations)
    sigma = max(max(trace.sigma_mf), max(trace.sigma_mi))
    h_norm = float(np.linalg.norm(state.heads))
    e0 = trace.errors[0]
    worst = np.inf
    violations = 0
    for k in range(1, iterations + 1):
        slack = geometric_bound(sigma, k, e0, h_norm) + BOUND_SLACK - trace.errors[k]
        worst = min(worst, slack)
        violations += slack < 0
    info = dict(instance or {}, n=network.n, epsilon=round(eps, 6), scenario=scenario.scenario_id)
    return ValidationOutcome("monotone_error", info, trace.errors[-1],
                             geometric_bound(sigma, iterations, e0, h_norm), violations == 0, float(worst),
                             {"sigma_bar": sigma, "violations": int(violations), "errors": trace.errors,
                              "sigma_subunitary": bool(sigma < 1.0)})


def random_connected_stochastic(n: int, epsilon: float, rng: np.random.Generator, extra_edges: float = 0.5):
    """Prediction matrix over a random connected graph (spanning tree plus random chords)."""
    W = np.zeros((n, n))
    order = rng.permutation(n)
    for i in range(1, n):
        j = order[rng.integers(0, i)]
        w = rng.uniform(0.1, 2.0)
        W[order[i], j] = W[j, order[i]] = w
    for _ in range(int(extra_edges * n)):
        a, b = rng.choice(n, size=2, replace=False)
        w = rng.uniform(0.1, 2.0)
        W[a, b] = W[b, a] = w
    Psi = W / W.sum(axis=1, keepdims=True)
    return epsilon * np.eye(n) + (1.0 - epsilon) * Psi


def random_psd(n: int, rng: np.random.Generator, rank: int | None = None) -> np.ndarray:
    A = rng.standard_normal((n, rank or n))
    return A @ A.T


def theory_battery(seed: int = 0, instances: int = 100, max_n: int = 30) -> list[ValidationOutcome]:
    """Randomised battery used by the ``validate-theory`` subcommand."""
    rng = np.random.default_rng(seed)
    out: list[ValidationOutcome] = []
    for i in range(instances):
        n = int(rng.integers(2, max_n + 1))
        P = random_psd(n, rng)
        k = int(rng.integers(0, n + 1))
        S = np.eye(n)[np.sort(rng.choice(n, size=k, replace=False))]
        R = rng.uniform(0.1, 2.0, size=k)
        out.append(check_woodbury_gain(P, S, R, instance={"seed": seed, "i": i}))
        D = np.diag(rng.uniform(0.0, 3.0, size=n) * (rng.random(n) > 0.3))
        out.append(check_pd_product_spectrum(random_psd(n, rng, rank=max(1, n // 2)), D,
                                             instance={"seed": seed, "i": i}))
    for i in range(max(1, instances // 2)):
        n = int(rng.integers(3, max_n + 1))
        for eps in (0.1, 0.5, 0.9):
            F = random_connected_stochastic(n, eps, rng)
            out.append(check_power_convergence(F, instance={"seed": seed, "i": i, "epsilon": eps}))
    return out
