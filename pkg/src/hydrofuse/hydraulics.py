"""Steady-state Hazen-Williams hydraulics used as ground truth.

Heads are in meters, flows and demands in L/s. Resistances passed to the
functions here must be in L/s units (``StructuralMatrices.resistance``).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import OrientationError, SolverError, ValidationError
from .network import HW_EXPONENT, NetworkModel, SensorLayout, build_structural, oriented_incidence

FLOW_EXPONENT = 1.0 / HW_EXPONENT
DROP_FLOOR = 1e-9
DERIVATIVE_FLOOR = 1e-10


@dataclass(frozen=True)
class HydraulicState:
    heads: np.ndarray
    flows: np.ndarray
    demands: np.ndarray

    def __post_init__(self):
        if np.any(self.flows < 0):
            raise ValidationError("flows must be nonnegative")


@dataclass(frozen=True)
class LeakScenario:
    leak_pipe: int
    leak_rate: float
    base_demand_seed: int
    timestamp_label: str = ""
    scenario_id: str = ""

    def __post_init__(self):
        if self.leak_rate < 0:
            raise ValidationError("leak_rate must be nonnegative")


@dataclass(frozen=True)
class NoiseSpec:
    sigma_head: float = 0.0
    sigma_demand: float = 0.0
    sigma_flow: float = 0.0
    demand_spread: float = 0.25


@dataclass(frozen=True)
class Measurements:
    """Raw sensor readings, ordered as the layout's index sets."""

    heads: np.ndarray    # at layout.pressure_nodes, m
    demands: np.ndarray  # at layout.amr_nodes, L/s
    flows: np.ndarray    # at layout.flow_pipes, L/s


def hazen_williams_flow(heads, incidence, resistance) -> np.ndarray:
    """Flow magnitudes ``(T^-1 B h)^(1/1.852)``; ``B`` must orient every drop as nonnegative."""
    drop = np.asarray(incidence, dtype=float) @ np.asarray(heads, dtype=float)
    if np.any(drop < -DROP_FLOOR):
        bad = int(np.argmin(drop))
        raise OrientationError(f"negative head drop {drop[bad]:.3g} m on pipe {bad}; re-orient the incidence")
    resistance = np.asarray(resistance, dtype=float)
    if resistance.ndim == 2:
        resistance = np.diag(resistance)
    return (np.maximum(drop, 0.0) / resistance) ** FLOW_EXPONENT


def nodal_balance(flows, incidence) -> np.ndarray:
    """Nodal consumption ``c = -B^T q`` (positive where water leaves the network)."""
    return -np.asarray(incidence, dtype=float).T @ np.asarray(flows, dtype=float)


def estimate_incidence(heads, network: NetworkModel) -> np.ndarray:
    """Orient each pipe from higher to lower head; ties go by elevation, then node index."""
    return oriented_incidence(network, np.asarray(heads, dtype=float), network.elevations)


def _head_loss(q, resistance):
    """Signed Hazen-Williams loss ``r q |q|^0.852`` and its derivative (floored away from zero)."""
    mag = np.abs(q) ** (HW_EXPONENT - 1.0)
    return resistance * q * mag, np.maximum(HW_EXPONENT * resistance * mag, DERIVATIVE_FLOOR)


def solve_steady_state(network: NetworkModel, inlet_heads: dict[int, float] | None = None,
                       demands=None, *, tol: float = 1e-10, max_iter: int = 200,
                       structural=None) -> HydraulicState:
    """Global-gradient Newton iteration on pipe flows and free heads.

    Unknowns are the signed flows (L/s) and the heads of non-inlet nodes.
    Head loss is smooth in the flow, so pipes that carry no water (dead ends
    without demand) do not spoil convergence the way a head-only formulation
    does. Converges when both the energy residual (m) and the mass residual
    (L/s) fall below ``tol``.
    """
    st = structural if structural is not None else build_structural(network)
    inlet_heads = network.inlet_heads() if inlet_heads is None else dict(inlet_heads)
    if not inlet_heads:
        raise ValidationError("at least one inlet with a fixed head is required")
    n = network.n
    c = np.zeros(n) if demands is None else np.asarray(demands, dtype=float).copy()
    if c.shape != (n,):
        raise ValidationError(f"demand vector has shape {c.shape}, expected ({n},)")
    fixed = np.array(sorted(inlet_heads), dtype=int)
    free = np.setdiff1d(np.arange(n), fixed)
    if np.any(c[free] < 0):
        raise ValidationError("demands at non-inlet nodes must be nonnegative")

    B = st.incidence
    r = st.resistance
    Bf, B0 = B[:, free], B[:, fixed]
    h = np.empty(n)
    h[fixed] = [inlet_heads[i] for i in fixed]
    h0_drop = B0 @ h[fixed]

    # linear warm start: unit conductances scaled by 1/r
    g = 1.0 / r
    h[free] = np.linalg.solve(Bf.T @ (g[:, None] * Bf), -c[free] - Bf.T @ (g * h0_drop)) if free.size else h[free]
    q = g * (B @ h)

    def residuals(qv, hv):
        loss, dloss = _head_loss(qv, r)
        return loss - B @ hv, -Bf.T @ qv - c[free], dloss

    f1, f2, d = residuals(q, h)
    norm = max(np.max(np.abs(f1), initial=0.0), np.max(np.abs(f2), initial=0.0))
    it = 0
    while norm >= tol and it < max_iter:
        it += 1
        inv_d = 1.0 / d
        A = Bf.T @ (inv_d[:, None] * Bf)
        try:
            dh = np.linalg.solve(A, f2 + Bf.T @ (inv_d * f1)) if free.size else np.zeros(0)
        except np.linalg.LinAlgError as exc:
            raise SolverError(f"singular Schur complement at iteration {it}", norm, it) from exc
        dq = inv_d * (Bf @ dh - f1)
        t = 1.0
        base = np.hypot(np.linalg.norm(f1), np.linalg.norm(f2))
        while True:
            q_t = q + t * dq
            h_t = h.copy()
            h_t[free] += t * dh
            f1_t, f2_t, d_t = residuals(q_t, h_t)
            if np.hypot(np.linalg.norm(f1_t), np.linalg.norm(f2_t)) < (1.0 - 1e-4 * t) * base or t < 1e-6:
                break
            t *= 0.5
        q, h, f1, f2, d = q_t, h_t, f1_t, f2_t, d_t
        norm = max(np.max(np.abs(f1), initial=0.0), np.max(np.abs(f2), initial=0.0))
    if norm >= tol:
        raise SolverError(f"steady state did not converge: residual {norm:.3e} after {it} iterations", norm, it)
    B_hat = estimate_incidence(h, network)
    # express the solved flows in the head-based orientation
    sign = 0.5 * np.sum(B_hat * B, axis=1)
    flows = np.maximum(sign * q, 0.0)
    demands_out = c.copy()
    demands_out[fixed] = nodal_balance(flows, B_hat)[fixed]
    return HydraulicState(heads=h, flows=flows, demands=demands_out)


def nominal_demands(network: NetworkModel, seed: int, spread: float = 0.25) -> np.ndarray:
    """Seeded multiplicative lognormal draw around each node's base demand; inlets get zero."""
    rng = np.random.default_rng([int(seed), 0])
    factors = np.exp(spread * rng.standard_normal(network.n))
    c = network.base_demands * factors
    c[network.inlets] = 0.0
    return c


def leak_demand(network: NetworkModel, pipe: int, rate: float) -> np.ndarray:
    """Leak realized as extra demand split equally on the pipe's endpoints."""
    if not 0 <= pipe < network.m:
        raise ValidationError(f"leak pipe {pipe} out of range")
    extra = np.zeros(network.n)
    s, t = network.endpoints[pipe]
    extra[s] += 0.5 * rate
    extra[t] += 0.5 * rate
    return extra


def generate_scenario(network: NetworkModel, layout: SensorLayout, scenario: LeakScenario,
                      noise: NoiseSpec | None = None, *, structural=None):
    """Solve the leak scenario and sample noisy sensor readings from the true state.

    Returns ``(true_state, measurements)``. Everything is a pure function of the
    inputs: demands and noise come from ``scenario.base_demand_seed``.
    """
    noise = noise or NoiseSpec()
    layout.check(network)
    if not 0 <= scenario.leak_pipe < network.m:
        raise ValidationError(f"leak pipe {scenario.leak_pipe} out of range")
    st = structural if structural is not None else build_structural(network)
    c = nominal_demands(network, scenario.base_demand_seed, noise.demand_spread)
    c = c + leak_demand(network, scenario.leak_pipe, scenario.leak_rate)
    state = solve_steady_state(network, network.inlet_heads(), c, structural=st)
    rng = np.random.default_rng([int(scenario.base_demand_seed), 1])
    p, a, f = list(layout.pressure_nodes), list(layout.amr_nodes), list(layout.flow_pipes)
    eh = rng.standard_normal(len(p)) * noise.sigma_head
    ec = rng.standard_normal(len(a)) * noise.sigma_demand
    eq = rng.standard_normal(len(f)) * noise.sigma_flow
    meas = Measurements(
        heads=state.heads[p] + eh,
        demands=state.demands[a] + ec,
        flows=state.flows[f] + eq,
    )
    return state, meas


def signed_flows(state: HydraulicState, network: NetworkModel) -> np.ndarray:
    """Flows expressed in the network's file orientation (negative = against it)."""
    ends = network.endpoints
    sign = np.where(state.heads[ends[:, 0]] >= state.heads[ends[:, 1]], 1.0, -1.0)
    return sign * state.flows
