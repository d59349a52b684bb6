"""Leak-agnostic head reconstruction from sparse pressure sensors.

GSI solves a smoothness QP over the graph; AW-GSI swaps the length-based
edge weights for weights derived from a Hazen-Williams linearisation around
a reference head vector. Both share the QP in :func:`interpolate_heads`.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import StructuralError, ValidationError
from .hydraulics import FLOW_EXPONENT
from .network import NetworkModel, SensorLayout, StructuralMatrices, distance_matrix, oriented_incidence
from .qp import QPResult, kkt_residuals, solve_qp

GAMMA_FLOOR = 1e-9
GAP_FLOOR = 1e-6
DEFAULT_ZETA = 100.0


class WeightSource(str, enum.Enum):
    GSI = "GSI"
    AWGSI = "AWGSI"


@dataclass(frozen=True)
class InterpolationWeights:
    omega: np.ndarray
    phi: np.ndarray
    source_tag: WeightSource

    def __post_init__(self):
        d = np.diag(self.phi)
        if np.any(self.omega < 0):
            raise ValidationError("interpolation weights must be nonnegative")
        if np.any(d <= 0):
            raise StructuralError("isolated node: zero weighted degree")

    @property
    def diffusion(self) -> np.ndarray:
        """Row-normalised weights ``Phi^-1 Omega``."""
        return self.omega / np.diag(self.phi)[:, None]


@dataclass(frozen=True)
class PredictionMatrix:
    F: np.ndarray
    epsilon: float


def gsi_weights(structural: StructuralMatrices) -> InterpolationWeights:
    return InterpolationWeights(np.array(structural.adjacency), np.array(structural.degree), WeightSource.GSI)


def awgsi_weights(structural: StructuralMatrices, reference_heads, network: NetworkModel | None = None,
                  gap_floor: float = GAP_FLOOR) -> InterpolationWeights:
    """Analytical weights ``eta_ij ~ tau^-0.54 |h_i - h_j|^-0.46`` normalised per row.

    Each edge uses the resistance of the pipe joining the pair. Gaps below
    ``gap_floor`` are floored before the negative power.
    """
    h = np.asarray(reference_heads, dtype=float)
    B = structural.incidence
    src = np.argmax(B, axis=1)
    dst = np.argmin(B, axis=1)
    gap = np.maximum(np.abs(h[src] - h[dst]), gap_floor)
    raw = structural.resistance ** (-FLOW_EXPONENT) * gap ** (FLOW_EXPONENT - 1.0)
    n = structural.n
    omega = np.zeros((n, n))
    omega[src, dst] = raw
    omega[dst, src] = raw
    omega = omega / omega.sum(axis=1, keepdims=True)
    return InterpolationWeights(omega, np.diag(omega.sum(axis=1)), WeightSource.AWGSI)


def build_prediction_matrix(weights: InterpolationWeights, epsilon: float) -> PredictionMatrix:
    """``F = eps I + (1 - eps) Phi^-1 Omega``: row-stochastic diffusion of the previous state."""
    if not 0.0 <= epsilon <= 1.0:
        raise ValidationError(f"epsilon must lie in [0, 1], got {epsilon}")
    n = weights.omega.shape[0]
    F = epsilon * np.eye(n) + (1.0 - epsilon) * weights.diffusion
    return PredictionMatrix(F, float(epsilon))


def default_orientation(network: NetworkModel, prior_heads=None) -> np.ndarray:
    """Expected-flow incidence (+1 upstream, -1 downstream).

    Upstream is the higher prior head when one is available; otherwise the
    endpoint closer to an inlet along the pipes, with elevation breaking ties.
    """
    if prior_heads is not None:
        return oriented_incidence(network, np.asarray(prior_heads, dtype=float), network.elevations)
    dist = distance_matrix(network, "meters")[network.inlets].min(axis=0)
    return oriented_incidence(network, -dist, network.elevations)


def smoothness_matrix(weights: InterpolationWeights) -> np.ndarray:
    """``M' M`` with ``M = I - Phi^-1 Omega`` (equals ``L D^-2 L`` for symmetric weights)."""
    M = np.eye(weights.omega.shape[0]) - weights.diffusion
    return M.T @ M


@dataclass
class InterpolationResult:
    heads: np.ndarray
    gamma: float
    qp: QPResult
    kkt: dict[str, float]


def interpolate_heads(weights: InterpolationWeights, layout: SensorLayout, head_measurements, *,
                      zeta: float = DEFAULT_ZETA, orientation: np.ndarray) -> InterpolationResult:
    """Solve ``min 0.5 [h' M'M h + zeta g^2]`` s.t. ``-B h <= g``, ``g >= 1e-9``, ``S h = h_s``.

    ``orientation`` is the expected-flow incidence (+1 upstream). The
    inequality bounds every head *rise* along the expected flow direction by
    the slack ``g``; sensed heads are eliminated, so they are reproduced exactly.
    """
    hs = np.asarray(head_measurements, dtype=float)
    sensed = np.asarray(layout.pressure_nodes, dtype=int)
    if sensed.size == 0:
        raise ValidationError("at least one pressure sensor is required")
    if hs.shape != sensed.shape or not np.all(np.isfinite(hs)):
        raise ValidationError("head measurements must be finite and match the pressure sensors")
    Q = smoothness_matrix(weights)
    n = Q.shape[0]
    free = np.setdiff1d(np.arange(n), sensed)
    nf = free.size
    C = -np.asarray(orientation, dtype=float)  # rows: h_downstream - h_upstream
    m = C.shape[0]

    # variables y = [h_free, gamma]
    H = np.zeros((nf + 1, nf + 1))
    H[:nf, :nf] = Q[np.ix_(free, free)]
    H[nf, nf] = zeta
    g = np.zeros(nf + 1)
    g[:nf] = Q[np.ix_(free, sensed)] @ hs
    A = np.zeros((m + 1, nf + 1))
    A[:m, :nf] = C[:, free]
    A[:m, nf] = -1.0
    b = np.zeros(m + 1)
    b[:m] = -C[:, sensed] @ hs
    A[m, nf] = -1.0
    b[m] = -GAMMA_FLOOR

    y0 = np.zeros(nf + 1)
    if nf:
        y0[:nf] = np.linalg.solve(H[:nf, :nf], -g[:nf])
    y0[nf] = max(float(np.max(A[:m, :nf] @ y0[:nf] - b[:m], initial=0.0)), 0.0) + 1.0
    res = solve_qp(H, g, A, b, y0)

    h = np.empty(n)
    h[sensed] = hs
    h[free] = res.x[:nf]
    kkt = kkt_residuals(H, g, A, b, res.x, res.multipliers)
    return InterpolationResult(h, float(res.x[nf]), res, kkt)


def gsi_interpolate(structural: StructuralMatrices, layout: SensorLayout, head_measurements,
                    zeta: float = DEFAULT_ZETA, *, network: NetworkModel, orientation=None) -> np.ndarray:
    B = default_orientation(network) if orientation is None else orientation
    return interpolate_heads(gsi_weights(structural), layout, head_measurements, zeta=zeta, orientation=B).heads


def awgsi_interpolate(structural: StructuralMatrices, layout: SensorLayout, head_measurements,
                      weights: InterpolationWeights, zeta: float = DEFAULT_ZETA, *, network: NetworkModel,
                      orientation=None) -> np.ndarray:
    B = default_orientation(network) if orientation is None else orientation
    return interpolate_heads(weights, layout, head_measurements, zeta=zeta, orientation=B).heads
