"""Leak-candidate ranking and localization KPIs.

The node metric is a surrogate leak-likelihood: the head drop between a
leak-free reference estimate and the leak-scenario estimate, min-max
normalised to [0, 1]. Pipes inherit the mean of their endpoint values and
candidates are the pipes at or above a threshold.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .network import NetworkModel, distance_matrix

DEFAULT_THRESHOLD = 0.7
LIKELIHOOD_METHODS = ("residual_minmax",)


@dataclass(frozen=True)
class NodeLikelihood:
    values: np.ndarray
    reference_id: str = ""
    leak_id: str = ""
    method: str = "residual_minmax"

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 1 or np.any(v < 0) or np.any(v > 1):
            raise ValidationError("node likelihood must be a vector with values in [0, 1]")


@dataclass(frozen=True)
class LocalizationReport:
    """The six localization KPIs for one scenario.

    Distance KPIs are ``None`` when the candidate set is empty.
    """

    candidate_pipes: tuple[int, ...]
    b_c: bool
    d_bar_c2l: float | None
    p_bar_c2l: float | None
    rho_c: float
    d_best_c2l: float | None
    p_best_c2l: float | None
    threshold: float = DEFAULT_THRESHOLD
    best_pipe: int | None = None
    extras: dict = field(default_factory=dict)

    @property
    def empty(self) -> bool:
        return not self.candidate_pipes


def node_likelihood(reference_heads, leak_heads, *, reference_id: str = "", leak_id: str = "",
                    method: str = "residual_minmax") -> NodeLikelihood:
    """Min-max normalised head drop ``reference - leak``; a constant drop maps to all zeros."""
    if method not in LIKELIHOOD_METHODS:
        raise ValidationError(f"unknown likelihood method {method!r}; choose from {LIKELIHOOD_METHODS}")
    ref = np.asarray(reference_heads, dtype=float)
    leak = np.asarray(leak_heads, dtype=float)
    if ref.shape != leak.shape or ref.ndim != 1:
        raise ValidationError("reference and leak heads must be vectors of equal length")
    r = ref - leak
    lo, hi = float(r.min()), float(r.max())
    if hi - lo <= 0.0:
        values = np.zeros_like(r)
    else:
        values = np.clip((r - lo) / (hi - lo), 0.0, 1.0)
    return NodeLikelihood(values, reference_id, leak_id, method)


def pipe_metric(node_metric: NodeLikelihood | np.ndarray, network: NetworkModel) -> np.ndarray:
    values = node_metric.values if isinstance(node_metric, NodeLikelihood) else np.asarray(node_metric, float)
    if values.shape != (network.n,):
        raise ValidationError(f"node metric has shape {values.shape}, expected ({network.n},)")
    ends = network.endpoints
    return 0.5 * (values[ends[:, 0]] + values[ends[:, 1]])


def candidate_set(metric, threshold: float = DEFAULT_THRESHOLD) -> tuple[int, ...]:
    """Indices of pipes whose metric is at or above ``threshold`` (inclusive)."""
    if not 0.0 <= threshold <= 1.0:
        raise ValidationError(f"threshold must lie in [0, 1], got {threshold}")
    return tuple(int(k) for k in np.flatnonzero(np.asarray(metric, dtype=float) >= threshold))


def _pipe_distances(network: NetworkModel, pipes, target: int, unit: str) -> np.ndarray:
    D = distance_matrix(network, unit)
    ends = network.endpoints
    a, b = ends[list(pipes), 0], ends[list(pipes), 1]
    u, v = ends[target]
    return 0.25 * (D[a, u] + D[a, v] + D[b, u] + D[b, v])


def pipe_to_pipe_distance(network: NetworkModel, pipe_k: int, pipe_l: int, unit: str = "meters") -> float:
    """Quarter-sum of the four endpoint-to-endpoint shortest paths.

    A pipe's distance to itself is half its own endpoint distance under this
    definition, not zero.
    """
    for k in (pipe_k, pipe_l):
        if not 0 <= k < network.m:
            raise ValidationError(f"pipe index {k} out of range")
    return float(_pipe_distances(network, [pipe_k], pipe_l, unit)[0])


def kpi_report(network: NetworkModel, candidates, metric, true_leak_pipe: int, *,
               threshold: float = DEFAULT_THRESHOLD) -> LocalizationReport:
    cands = tuple(sorted(int(k) for k in candidates))
    m = network.m
    rho = 100.0 * len(cands) / m
    if not cands:
        return LocalizationReport((), False, None, None, 0.0, None, None, threshold)
    metric = np.asarray(metric, dtype=float)
    w = metric[list(cands)]
    total = float(w.sum())
    # all-zero metrics only happen with threshold 0; fall back to uniform weights
    w = w / total if total > 0 else np.full(len(cands), 1.0 / len(cands))
    d = _pipe_distances(network, cands, true_leak_pipe, "meters")
    p = _pipe_distances(network, cands, true_leak_pipe, "hops")
    best = int(np.argmax(metric[list(cands)]))  # first maximum: lowest pipe index wins ties
    return LocalizationReport(
        candidate_pipes=cands,
        b_c=true_leak_pipe in cands,
        d_bar_c2l=float(w @ d),
        p_bar_c2l=float(w @ p),
        rho_c=rho,
        d_best_c2l=float(d[best]),
        p_best_c2l=float(p[best]),
        threshold=threshold,
        best_pipe=cands[best],
    )


def top_node_hops(network: NetworkModel, likelihood: NodeLikelihood, leak_pipe: int) -> int:
    """Hop distance from the highest-ranked node to the nearer leak-pipe endpoint."""
    top = int(np.argmax(likelihood.values))
    D = distance_matrix(network, "hops")
    u, v = network.endpoints[leak_pipe]
    return int(min(D[top, u], D[top, v]))


def localize(network: NetworkModel, reference_heads, leak_heads, leak_pipe: int, *,
             threshold: float = DEFAULT_THRESHOLD, scenario_id: str = "") -> tuple[NodeLikelihood, LocalizationReport]:
    """Node metric, pipe metric, candidates and KPIs in one call."""
    like = node_likelihood(reference_heads, leak_heads, reference_id=f"{scenario_id}:ref", leak_id=scenario_id)
    metric = pipe_metric(like, network)
    report = kpi_report(network, candidate_set(metric, threshold), metric, leak_pipe, threshold=threshold)
    return like, report
