"""Water network graph model and the structural matrices derived from it.

Node and pipe ordering is the order in which they were supplied; every
matrix and vector in the package is indexed in that order.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components, dijkstra

from .errors import StructuralError, ValidationError

HW_EXPONENT = 1.852
HW_COEFFICIENT = 10.67
# tau is evaluated in SI (flow in m^3/s); multiplying by this factor gives the
# coefficient for flows in L/s:  dh = tau_si * (q/1000)^1.852 = tau_si * 1000^-1.852 * q^1.852
LPS_RESISTANCE_FACTOR = 1000.0 ** (-HW_EXPONENT)


@dataclass(frozen=True)
class Node:
    id: str
    elevation: float = 0.0
    is_inlet: bool = False
    inlet_head: float | None = None
    base_demand: float = 0.0


@dataclass(frozen=True)
class Pipe:
    id: str
    source: int
    sink: int
    length: float
    diameter: float
    roughness: float


def resistance_coefficient(length, diameter, roughness):
    """Hazen-Williams resistance ``10.67 L / (C^1.852 D^4.87)`` in SI units."""
    return HW_COEFFICIENT * np.asarray(length, dtype=float) / (
        np.asarray(roughness, dtype=float) ** HW_EXPONENT
        * np.asarray(diameter, dtype=float) ** 4.87
    )


@dataclass(frozen=True)
class NetworkModel:
    """Immutable junction/pipe graph.

    Validation runs on construction: simple graph, valid endpoints, positive
    pipe attributes, at least one inlet, connected.
    """

    nodes: tuple[Node, ...]
    pipes: tuple[Pipe, ...]
    name: str = "network"

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "pipes", tuple(self.pipes))
        n = len(self.nodes)
        if n == 0:
            raise ValidationError("network has no nodes")
        ids = [node.id for node in self.nodes]
        if len(set(ids)) != n:
            raise ValidationError("duplicate node ids")
        pipe_ids = [p.id for p in self.pipes]
        if len(set(pipe_ids)) != len(pipe_ids):
            raise ValidationError("duplicate pipe ids")
        seen = set()
        for p in self.pipes:
            if not (0 <= p.source < n and 0 <= p.sink < n):
                raise ValidationError(f"pipe {p.id!r} references a node index out of range")
            if p.source == p.sink:
                raise ValidationError(f"pipe {p.id!r} is a self-loop")
            key = frozenset((p.source, p.sink))
            if key in seen:
                raise ValidationError(f"pipe {p.id!r} duplicates an existing edge")
            seen.add(key)
            for attr in ("length", "diameter", "roughness"):
                value = getattr(p, attr)
                if not np.isfinite(value) or value <= 0:
                    raise ValidationError(f"pipe {p.id!r} has nonpositive {attr} ({value})")
        if not any(node.is_inlet for node in self.nodes):
            raise ValidationError("network has no inlet node")
        if n > 1:
            graph = csr_matrix(
                (np.ones(len(self.pipes)), ([p.source for p in self.pipes], [p.sink for p in self.pipes])),
                shape=(n, n),
            )
            ncomp, _ = connected_components(graph, directed=False)
            if ncomp != 1:
                raise StructuralError(f"network is disconnected ({ncomp} components)")

    @property
    def n(self) -> int:
        return len(self.nodes)

    @property
    def m(self) -> int:
        return len(self.pipes)

    @cached_property
    def node_index(self) -> dict[str, int]:
        return {node.id: i for i, node in enumerate(self.nodes)}

    @cached_property
    def pipe_index(self) -> dict[str, int]:
        return {p.id: k for k, p in enumerate(self.pipes)}

    @cached_property
    def endpoints(self) -> np.ndarray:
        """(m, 2) array of (source, sink) node indices."""
        return np.array([(p.source, p.sink) for p in self.pipes], dtype=int).reshape(-1, 2)

    @cached_property
    def neighbors(self) -> tuple[tuple[tuple[int, int], ...], ...]:
        """Per node, a tuple of (neighbor index, pipe index) pairs."""
        adj: list[list[tuple[int, int]]] = [[] for _ in range(self.n)]
        for k, p in enumerate(self.pipes):
            adj[p.source].append((p.sink, k))
            adj[p.sink].append((p.source, k))
        return tuple(tuple(a) for a in adj)

    @property
    def inlets(self) -> list[int]:
        return [i for i, node in enumerate(self.nodes) if node.is_inlet]

    @property
    def elevations(self) -> np.ndarray:
        return np.array([node.elevation for node in self.nodes], dtype=float)

    @property
    def base_demands(self) -> np.ndarray:
        return np.array([node.base_demand for node in self.nodes], dtype=float)

    @property
    def lengths(self) -> np.ndarray:
        return np.array([p.length for p in self.pipes], dtype=float)

    def inlet_heads(self) -> dict[int, float]:
        """Fixed heads declared on inlet nodes (inlets without a head are skipped)."""
        return {i: float(node.inlet_head) for i, node in enumerate(self.nodes)
                if node.is_inlet and node.inlet_head is not None}

    def remove_nodes(self, node_ids: Iterable[str]) -> "NetworkModel":
        """Drop nodes and every pipe touching them; remaining order is preserved."""
        drop = set(node_ids)
        unknown = drop - set(self.node_index)
        if unknown:
            raise ValidationError(f"unknown node ids: {sorted(unknown)}")
        keep = [i for i, node in enumerate(self.nodes) if node.id not in drop]
        remap = {old: new for new, old in enumerate(keep)}
        pipes = [
            Pipe(p.id, remap[p.source], remap[p.sink], p.length, p.diameter, p.roughness)
            for p in self.pipes
            if p.source in remap and p.sink in remap
        ]
        return NetworkModel(tuple(self.nodes[i] for i in keep), tuple(pipes), self.name)

    def with_inlets(self, heads: dict[str, float], exclusive: bool = True) -> "NetworkModel":
        """Re-root the network: mark ``heads`` keys as inlets with fixed heads.

        With ``exclusive`` the previous inlets are demoted to junctions.
        """
        unknown = set(heads) - set(self.node_index)
        if unknown:
            raise ValidationError(f"unknown node ids: {sorted(unknown)}")
        nodes = []
        for node in self.nodes:
            if node.id in heads:
                nodes.append(Node(node.id, node.elevation, True, float(heads[node.id]), node.base_demand))
            elif exclusive and node.is_inlet:
                nodes.append(Node(node.id, node.elevation, False, None, node.base_demand))
            else:
                nodes.append(node)
        return NetworkModel(tuple(nodes), self.pipes, self.name)


@dataclass(frozen=True)
class StructuralMatrices:
    incidence: np.ndarray      # (m, n), +1 source / -1 sink in file orientation
    tau: np.ndarray            # (m,), SI resistance coefficients
    resistance: np.ndarray     # (m,), resistance for flows in L/s
    adjacency: np.ndarray      # (n, n), w_ij = 1 / length
    degree: np.ndarray         # (n, n) diagonal
    laplacian: np.ndarray      # (n, n)
    pipe_weights: np.ndarray = field(repr=False)  # (m,), 1 / length

    @property
    def n(self) -> int:
        return self.incidence.shape[1]

    @property
    def m(self) -> int:
        return self.incidence.shape[0]

    @property
    def T(self) -> np.ndarray:
        return np.diag(self.resistance)


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=float)
    a.setflags(write=False)
    return a


def build_structural(network: NetworkModel) -> StructuralMatrices:
    n, m = network.n, network.m
    ends = network.endpoints
    B = np.zeros((m, n))
    rows = np.arange(m)
    B[rows, ends[:, 0]] = 1.0
    B[rows, ends[:, 1]] = -1.0
    pipes = network.pipes
    tau = resistance_coefficient([p.length for p in pipes], [p.diameter for p in pipes],
                                 [p.roughness for p in pipes]).reshape(m)
    w = 1.0 / network.lengths
    W = np.zeros((n, n))
    W[ends[:, 0], ends[:, 1]] = w
    W[ends[:, 1], ends[:, 0]] = w
    d = W.sum(axis=1)
    if n > 1 and np.any(d <= 0):
        raise StructuralError("isolated node in network")
    D = np.diag(d)
    return StructuralMatrices(
        incidence=_frozen(B),
        tau=_frozen(tau),
        resistance=_frozen(tau * LPS_RESISTANCE_FACTOR),
        adjacency=_frozen(W),
        degree=_frozen(D),
        laplacian=_frozen(D - W),
        pipe_weights=_frozen(w),
    )


def selection_matrix(indices: Sequence[int], dimension: int) -> np.ndarray:
    """Rows are the standard basis vectors picked by ``indices``."""
    idx = [int(i) for i in indices]
    if len(set(idx)) != len(idx):
        raise ValidationError("selection indices contain duplicates")
    for i in idx:
        if not 0 <= i < dimension:
            raise ValidationError(f"selection index {i} out of range for dimension {dimension}")
    S = np.zeros((len(idx), dimension))
    S[np.arange(len(idx)), idx] = 1.0
    return S


@dataclass(frozen=True)
class SensorLayout:
    pressure_nodes: tuple[int, ...] = ()
    amr_nodes: tuple[int, ...] = ()
    flow_pipes: tuple[int, ...] = ()

    def __post_init__(self):
        for name in ("pressure_nodes", "amr_nodes", "flow_pipes"):
            values = tuple(int(v) for v in getattr(self, name))
            if len(set(values)) != len(values):
                raise ValidationError(f"{name} contains duplicates")
            if any(v < 0 for v in values):
                raise ValidationError(f"{name} contains negative indices")
            object.__setattr__(self, name, values)

    def check(self, network: NetworkModel) -> "SensorLayout":
        for name, dim in (("pressure_nodes", network.n), ("amr_nodes", network.n), ("flow_pipes", network.m)):
            bad = [v for v in getattr(self, name) if v >= dim]
            if bad:
                raise ValidationError(f"{name} indices out of range: {bad}")
        return self

    @property
    def n_s(self) -> int:
        return len(self.pressure_nodes)

    @property
    def n_c(self) -> int:
        return len(self.amr_nodes)

    @property
    def n_q(self) -> int:
        return len(self.flow_pipes)

    def S(self, n: int) -> np.ndarray:
        return selection_matrix(self.pressure_nodes, n)

    def S_q(self, m: int) -> np.ndarray:
        return selection_matrix(self.flow_pipes, m)


def _csgraph(network: NetworkModel, unit: str) -> csr_matrix:
    ends = network.endpoints
    if unit == "meters":
        w = network.lengths
    elif unit == "hops":
        w = np.ones(network.m)
    else:
        raise ValidationError(f"unknown distance unit {unit!r}")
    return csr_matrix((w, (ends[:, 0], ends[:, 1])), shape=(network.n, network.n))


def distance_matrix(network: NetworkModel, unit: str = "meters") -> np.ndarray:
    """All-pairs shortest path distances (pipe lengths or unit hop weights)."""
    cache = network.__dict__.setdefault("_distance_cache", {})
    if unit not in cache:
        dist = dijkstra(_csgraph(network, unit), directed=False)
        dist.setflags(write=False)
        cache[unit] = dist
    return cache[unit]


def shortest_path_hops(network: NetworkModel, u: int, v: int) -> int:
    return int(round(distance_matrix(network, "hops")[u, v]))


def shortest_path_meters(network: NetworkModel, u: int, v: int) -> float:
    return float(distance_matrix(network, "meters")[u, v])


def oriented_incidence(network: NetworkModel, priority: np.ndarray, tie_break: np.ndarray | None = None) -> np.ndarray:
    """Incidence with +1 on the endpoint of larger ``priority`` (ties by ``tie_break``, then index)."""
    ends = network.endpoints
    a, b = ends[:, 0], ends[:, 1]
    pa, pb = priority[a], priority[b]
    a_first = pa > pb
    ties = pa == pb
    if tie_break is not None:
        ta, tb = tie_break[a], tie_break[b]
        a_first |= ties & (ta > tb)
        ties &= ta == tb
    a_first |= ties & (a < b)
    B = np.zeros((network.m, network.n))
    rows = np.arange(network.m)
    B[rows, np.where(a_first, a, b)] = 1.0
    B[rows, np.where(a_first, b, a)] = -1.0
    return B
