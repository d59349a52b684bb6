"""Kalman, unscented Kalman and dual head/flow estimators."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .errors import DivergenceError, NumericalError, ValidationError
from .hydraulics import FLOW_EXPONENT, Measurements, estimate_incidence, hazen_williams_flow
from .interpolation import InterpolationWeights, build_prediction_matrix
from .network import NetworkModel, SensorLayout, StructuralMatrices

JITTER_LADDER = (0.0, 1e-12, 1e-11, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6)
PSD_TOL = 1e-9


@dataclass(frozen=True)
class GaussianBelief:
    mean: np.ndarray
    cov: np.ndarray

    @property
    def dim(self) -> int:
        return self.mean.shape[0]


@dataclass(frozen=True)
class SigmaPointSet:
    points: np.ndarray        # (d, 2d+1), column 0 is the mean
    mean_weights: np.ndarray
    cov_weights: np.ndarray
    eta: float
    alpha: float
    beta: float
    lam: float

    @property
    def center_offset(self) -> float:
        """``w0_c - w0_m = 1 - alpha^2 + beta^2``."""
        return self.cov_weights[0] - self.mean_weights[0]


@dataclass(frozen=True)
class EstimatorConfig:
    """Tuning of the Kalman-type estimators.

    Covariances are isotropic: each ``*_h``/``*_q`` value multiplies an
    identity of the matching size. ``epsilon=None`` means ``n_c / n``.
    """

    alpha: float = 1e-3
    beta: float = 2.0
    epsilon: float | None = None
    q_h: float = 1.0
    r_h: float = 1e-4
    q_q: float = 1.0
    r_q: float = 1e-4
    p0_h: float = 1.0
    p0_q: float = 1.0
    r_virtual: float = 1.0
    k_d: int = 10
    max_iters: int = 200
    conv_tol_h: float = 1e-4
    conv_tol_q: float = 1e-4
    patience: int = 3
    flow_sensor_confidence_scale: float = 1e-4
    zeta: float = 100.0

    def __post_init__(self):
        if not 0.0 < self.alpha <= 1.0:
            raise ValidationError("alpha must lie in (0, 1]")
        if self.k_d < 1:
            raise ValidationError("k_d must be at least 1")
        for name in ("q_h", "q_q", "p0_h", "p0_q"):
            if getattr(self, name) < 0:
                raise ValidationError(f"{name} must be nonnegative")
        for name in ("r_h", "r_q", "r_virtual", "conv_tol_h", "conv_tol_q", "flow_sensor_confidence_scale", "zeta"):
            if getattr(self, name) <= 0:
                raise ValidationError(f"{name} must be positive")
        if self.epsilon is not None and not 0.0 <= self.epsilon <= 1.0:
            raise ValidationError("epsilon must lie in [0, 1]")
        if self.max_iters < 1 or self.patience < 1:
            raise ValidationError("max_iters and patience must be positive")

    def with_overrides(self, **kwargs) -> "EstimatorConfig":
        return replace(self, **kwargs)


@dataclass(frozen=True)
class MeasurementSet:
    """Stacked measurement vectors of the two coupled estimators."""

    z_h: np.ndarray   # [h_s, c_a, q] (the flow block only in the dual estimator)
    z_q: np.ndarray   # [q_s, virtual flows]
    n_s: int
    n_c: int
    m: int
    n_q: int

    def __post_init__(self):
        if self.z_h.shape[0] not in (self.n_s + self.n_c, self.n_s + self.n_c + self.m):
            raise ValidationError("z_h segment lengths do not match the layout")
        if self.z_q.shape[0] not in (0, self.n_q + self.m):
            raise ValidationError("z_q segment lengths do not match the layout")


def symmetrize(P: np.ndarray) -> np.ndarray:
    return 0.5 * (P + P.T)


def _as_cov(value, dim: int) -> np.ndarray:
    a = np.asarray(value, dtype=float)
    if a.ndim == 0:
        return float(a) * np.eye(dim)
    if a.ndim == 1:
        return np.diag(a)
    return a


def robust_cholesky(P: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor of ``P + jitter I``, escalating jitter from 0 to 1e-6."""
    eye = np.eye(P.shape[0])
    for jitter in JITTER_LADDER:
        try:
            return np.linalg.cholesky(P + jitter * eye)
        except np.linalg.LinAlgError:
            continue
    raise NumericalError(f"Cholesky failed up to jitter {JITTER_LADDER[-1]:g}; "
                         f"min eigenvalue {np.linalg.eigvalsh(symmetrize(P)).min():.3e}")


def _solve_spd(S: np.ndarray, rhs: np.ndarray, what: str) -> np.ndarray:
    """``S^-1 rhs`` for a symmetric innovation covariance; raises with a condition report."""
    try:
        c = np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        cond = np.linalg.cond(S)
        raise NumericalError(f"{what} is not positive definite (condition number {cond:.3e})") from None
    y = np.linalg.solve(c, rhs)
    return np.linalg.solve(c.T, y)


def kf_step(belief: GaussianBelief, F, B_u, u, Q, G, R, y) -> GaussianBelief:
    """Linear Kalman predict + update.

    ``B_u``/``u`` may be ``None`` (no input); ``G`` may have zero rows, in
    which case only the prediction is applied.
    """
    F = np.asarray(F, dtype=float)
    d = belief.dim
    x = F @ belief.mean
    if B_u is not None and u is not None:
        x = x + np.asarray(B_u, dtype=float) @ np.asarray(u, dtype=float)
    P = F @ belief.cov @ F.T + _as_cov(Q, d)
    G = np.asarray(G, dtype=float).reshape(-1, d)
    if G.shape[0] == 0:
        return GaussianBelief(x, symmetrize(P))
    R = _as_cov(R, G.shape[0])
    S = G @ P @ G.T + R
    K = _solve_spd(symmetrize(S), G @ P, "innovation covariance").T
    x_post = x + K @ (np.asarray(y, dtype=float) - G @ x)
    P_post = (np.eye(d) - K @ G) @ P
    return GaussianBelief(x_post, symmetrize(P_post))


def sigma_points(belief: GaussianBelief, alpha: float, beta: float) -> SigmaPointSet:
    d = belief.dim
    lam = d * (alpha ** 2 - 1.0)
    c = d + lam
    eta = float(np.sqrt(c))
    L = robust_cholesky(belief.cov)
    x = belief.mean[:, None]
    pts = np.hstack([x, x + eta * L, x - eta * L])
    wm = np.full(2 * d + 1, 1.0 / (2.0 * c))
    wc = wm.copy()
    wm[0] = lam / c
    wc[0] = lam / c + (1.0 - alpha ** 2 + beta ** 2)
    return SigmaPointSet(pts, wm, wc, eta, alpha, beta, lam)


def unscented_moments(sigma: SigmaPointSet, outputs: np.ndarray):
    """Weighted mean, covariance and cross-covariance of propagated sigma points.

    Returns ``(mean, cov, cross)`` with ``cross = sum w_c (X_i - x)(Y_i - y)'``.
    Sums are taken relative to the central point, which is algebraically the
    same as the textbook sums but avoids cancellation when ``w0`` is of order
    ``-1/alpha^2``.
    """
    w = sigma.mean_weights[1:]
    X0 = sigma.points[:, :1]
    Y0 = outputs[:, :1]
    e = sigma.points[:, 1:] - X0
    dY = outputs[:, 1:] - Y0
    mu = dY @ w
    nu = e @ w
    k = sigma.center_offset - 1.0
    cov = (dY * w) @ dY.T + k * np.outer(mu, mu)
    cross = (e * w) @ dY.T + k * np.outer(nu, mu)
    return Y0[:, 0] + mu, symmetrize(cov), cross


def unscented_moments_naive(sigma: SigmaPointSet, outputs: np.ndarray):
    """Direct weighted sums; reference implementation for tests."""
    y = outputs @ sigma.mean_weights
    x = sigma.points @ sigma.mean_weights
    dY = outputs - y[:, None]
    dX = sigma.points - x[:, None]
    return y, (dY * sigma.cov_weights) @ dY.T, (dX * sigma.cov_weights) @ dY.T


def _propagate(fn, points):
    if callable(fn):
        return np.asarray(fn(points), dtype=float)
    return np.asarray(fn, dtype=float) @ points


def ukf_step(belief: GaussianBelief, process_fn, measurement_fn: Callable, Q, R, z,
             alpha: float = 1e-3, beta: float = 2.0) -> GaussianBelief:
    """One unscented predict / measurement-propagation / correction cycle.

    ``process_fn`` and ``measurement_fn`` map a (d, N) block of sigma points to
    a block of outputs; ``process_fn`` may also be a plain matrix.
    """
    d = belief.dim
    sig = sigma_points(belief, alpha, beta)
    x_prior, P_prior, _ = unscented_moments(sig, _propagate(process_fn, sig.points))
    P_prior = symmetrize(P_prior + _as_cov(Q, d))
    prior = GaussianBelief(x_prior, P_prior)
    return unscented_update(prior, measurement_fn, R, z, alpha, beta)[0]


def unscented_update(prior: GaussianBelief, measurement_fn: Callable, R, z, alpha, beta):
    """Correction of ``prior`` with a nonlinear measurement; also returns the innovation."""
    sig = sigma_points(prior, alpha, beta)
    Y = np.asarray(measurement_fn(sig.points), dtype=float)
    y_hat, P_yy, P_xy = unscented_moments(sig, Y)
    P_yy = symmetrize(P_yy + _as_cov(R, Y.shape[0]))
    K = _solve_spd(P_yy, P_xy.T, "measurement covariance P_yy").T
    innovation = np.asarray(z, dtype=float) - y_hat
    x = prior.mean + K @ innovation
    P = symmetrize(prior.cov - K @ P_yy @ K.T)
    return GaussianBelief(x, P), innovation


def head_measurement_fn(sigma_heads, structural: StructuralMatrices, layout: SensorLayout,
                        B_hat: np.ndarray, include_virtual_flows: bool) -> np.ndarray:
    """Measurement sigma block: sensed heads, AMR demands and (optionally) all pipe flows.

    Drops that come out negative for off-centre sigma points are clamped to
    zero flow instead of re-orienting per column, which keeps the map continuous.
    """
    H = np.asarray(sigma_heads, dtype=float)
    if H.ndim == 1:
        H = H[:, None]
    drop = (B_hat @ H) / structural.resistance[:, None]
    flows = np.maximum(drop, 0.0) ** FLOW_EXPONENT
    B_c = B_hat[:, list(layout.amr_nodes)]
    rows = [H[list(layout.pressure_nodes)], -B_c.T @ flows]
    if include_virtual_flows:
        rows.append(flows)
    return np.vstack(rows)


def flow_kf_step(flow_belief: GaussianBelief, Q_q, G_q, R_q, z_q) -> GaussianBelief:
    """Flow estimator: identity prediction, then update against real and virtual flows."""
    m = flow_belief.dim
    return kf_step(flow_belief, np.eye(m), None, None, Q_q, G_q, R_q, z_q)


def flow_measurement_model(layout: SensorLayout, m: int, config: EstimatorConfig):
    """``G_q = [S_q; I]`` and the matching diagonal ``R_q`` (real sensors scaled down)."""
    G = np.vstack([layout.S_q(m), np.eye(m)])
    r = np.concatenate([np.full(layout.n_q, config.r_q * config.flow_sensor_confidence_scale),
                        np.full(m, config.r_q)])
    return G, np.diag(r)


@dataclass
class RunDiagnostics:
    iterations: int = 0
    converged: bool = False
    records: list[dict] = field(default_factory=list)

    def as_rows(self) -> list[dict]:
        return list(self.records)


def _virtual_flows(heads, network, structural):
    B = estimate_incidence(heads, network)
    return hazen_williams_flow(heads, B, structural.resistance), B


def _check_finite(name, value, diag: RunDiagnostics):
    if not np.all(np.isfinite(value)):
        raise DivergenceError(f"{name} became non-finite at iteration {diag.iterations}", diag.records)


def _check_psd(P, name, diag: RunDiagnostics):
    scale = max(1.0, float(np.max(np.abs(np.diag(P)))))
    try:
        np.linalg.cholesky(P + PSD_TOL * scale * np.eye(P.shape[0]))
    except np.linalg.LinAlgError:
        raise NumericalError(f"{name} lost positive semidefiniteness at iteration {diag.iterations}") from None


def _epsilon(config: EstimatorConfig, layout: SensorLayout, n: int) -> float:
    return config.epsilon if config.epsilon is not None else layout.n_c / n


def dual_ukf_run(network: NetworkModel, structural: StructuralMatrices, layout: SensorLayout,
                 weights: InterpolationWeights, config: EstimatorConfig, measurements: Measurements,
                 initial_heads) -> tuple[np.ndarray, np.ndarray, RunDiagnostics]:
    """Dual estimator: head UKF and flow KF exchanging virtual measurements every ``k_d`` iterations."""
    return _run(network, structural, layout, weights, config, measurements, initial_heads, dual=True)


def ukf_awgsi_run(network: NetworkModel, structural: StructuralMatrices, layout: SensorLayout,
                  weights: InterpolationWeights, config: EstimatorConfig, measurements: Measurements,
                  initial_heads) -> tuple[np.ndarray, RunDiagnostics]:
    """Head-only UKF fusing pressure and AMR demand readings."""
    h, _, diag = _run(network, structural, layout, weights, config, measurements, initial_heads, dual=False)
    return h, diag


def _run(network, structural, layout, weights, config, meas, h0, *, dual):
    layout.check(network)
    n, m = network.n, network.m
    F = build_prediction_matrix(weights, _epsilon(config, layout, n)).F
    Q_h = config.q_h * np.eye(n)
    r_rows = [np.full(layout.n_s, config.r_h), np.full(layout.n_c, config.r_h)]
    if dual:
        r_rows.append(np.full(m, config.r_virtual))
    R_h = np.diag(np.concatenate(r_rows))
    base_z = np.concatenate([np.asarray(meas.heads, float), np.asarray(meas.demands, float)])
    q_s = np.asarray(meas.flows, dtype=float)

    h = np.asarray(h0, dtype=float).copy()
    belief_h = GaussianBelief(h, config.p0_h * np.eye(n))
    diag = RunDiagnostics()
    _check_finite("initial heads", h, diag)

    if dual:
        q0, _ = _virtual_flows(h, network, structural)
        z_h = np.concatenate([base_z, q0])
        z_q = np.concatenate([q_s, q0])
        G_q, R_q = flow_measurement_model(layout, m, config)
        belief_q = GaussianBelief(q0, config.p0_q * np.eye(m))
        Q_q = config.q_q * np.eye(m)
    else:
        z_h = base_z

    calm = 0
    for k in range(1, config.max_iters + 1):
        diag.iterations = k
        h_prev = belief_h.mean
        x_prior = F @ belief_h.mean
        P_prior = symmetrize(F @ belief_h.cov @ F.T + Q_h)
        B_prior = estimate_incidence(x_prior, network)
        prior = GaussianBelief(x_prior, P_prior)

        def g(points, B_prior=B_prior):
            return head_measurement_fn(points, structural, layout, B_prior, dual)

        belief_h, innovation = unscented_update(prior, g, R_h, z_h, config.alpha, config.beta)
        _check_finite("head state", belief_h.mean, diag)
        _check_psd(belief_h.cov, "head covariance", diag)
        dh = float(np.max(np.abs(belief_h.mean - h_prev)))
        record = {"iteration": k, "dh_inf": dh, "innovation_norm": float(np.linalg.norm(innovation)),
                  "trace_P_h": float(np.trace(belief_h.cov))}

        if dual:
            q_prev = belief_q.mean
            belief_q = flow_kf_step(belief_q, Q_q, G_q, R_q, z_q)
            _check_finite("flow state", belief_q.mean, diag)
            _check_psd(belief_q.cov, "flow covariance", diag)
            virtual, _ = _virtual_flows(belief_h.mean, network, structural)
            if k % config.k_d == 0:
                z_h = np.concatenate([base_z, belief_q.mean])
                z_q = np.concatenate([q_s, virtual])
            dq = float(np.max(np.abs(belief_q.mean - q_prev)))
            # stopping also needs the virtual flows in use to match the current heads
            stale = float(np.max(np.abs(virtual - z_q[layout.n_q:]), initial=0.0))
            record.update(dq_inf=dq, trace_P_q=float(np.trace(belief_q.cov)), virtual_gap=stale)
            settled = dh < config.conv_tol_h and dq < config.conv_tol_q and stale < config.conv_tol_q
        else:
            record.update(dq_inf=0.0, trace_P_q=0.0)
            settled = dh < config.conv_tol_h
        diag.records.append(record)
        calm = calm + 1 if settled else 0
        if calm >= config.patience:
            diag.converged = True
            break

    if dual:
        return belief_h.mean, belief_q.mean, diag
    q, _ = _virtual_flows(belief_h.mean, network, structural)
    return belief_h.mean, q, diag
