"""Seeded generator for desk-scale benchmark networks, layouts and leak batches."""

from __future__ import annotations

from collections import deque

import numpy as np
from scipy.sparse.csgraph import minimum_spanning_tree
from scipy.spatial import Delaunay

from .hydraulics import LeakScenario
from .network import NetworkModel, Node, Pipe, SensorLayout, distance_matrix

COMMERCIAL_DIAMETERS = np.array([0.08, 0.1, 0.125, 0.15, 0.2, 0.25, 0.3, 0.35, 0.4, 0.5, 0.6])


def derive_seed(root: int, index: int) -> int:
    """Per-scenario seed from a root seed and the scenario position (independent of scheduling)."""
    return int(np.random.SeedSequence([int(root), int(index)]).generate_state(1, dtype=np.uint32)[0])


def random_network(n_nodes: int, seed: int, *, extent: float = 1500.0, loop_fraction: float = 0.25,
                   inlet_head: float = 76.0, mean_demand: float = 0.25, design_velocity: float = 1.0,
                   name: str | None = None) -> NetworkModel:
    """Planar looped network: Delaunay MST plus a fraction of the remaining Delaunay edges.

    Node 0 is the inlet (placed near a corner). Pipe diameters are sized from
    the downstream demand each pipe carries in the spanning tree, so trunk
    mains come out much larger than distribution pipes.
    """
    rng = np.random.default_rng(seed)
    pts = rng.uniform(0.0, extent, size=(n_nodes, 2))
    pts[0] = [0.05 * extent, 0.05 * extent]
    tri = Delaunay(pts)
    edges = set()
    for simplex in tri.simplices:
        for a in range(3):
            i, j = sorted((int(simplex[a]), int(simplex[(a + 1) % 3])))
            edges.add((i, j))
    edges = sorted(edges)
    length = {e: float(np.hypot(*(pts[e[0]] - pts[e[1]]))) for e in edges}
    W = np.zeros((n_nodes, n_nodes))
    for (i, j) in edges:
        W[i, j] = length[(i, j)]
    mst = minimum_spanning_tree(W).tocoo()
    tree = sorted({tuple(sorted((int(i), int(j)))) for i, j in zip(mst.row, mst.col)})
    rest = [e for e in edges if e not in set(tree)]
    # prefer short cross-connections, as real looped grids do
    rest.sort(key=lambda e: length[e] * rng.uniform(0.7, 1.3))
    extra = rest[: int(round(loop_fraction * n_nodes))]
    chosen = tree + extra

    base = rng.uniform(0.4, 1.6, n_nodes) * mean_demand
    base[0] = 0.0

    # downstream load through the spanning tree rooted at the inlet
    adj = [[] for _ in range(n_nodes)]
    for i, j in tree:
        adj[i].append(j)
        adj[j].append(i)
    parent = -np.ones(n_nodes, dtype=int)
    order = []
    seen = np.zeros(n_nodes, dtype=bool)
    queue = deque([0])
    seen[0] = True
    while queue:
        u = queue.popleft()
        order.append(u)
        for v in adj[u]:
            if not seen[v]:
                seen[v] = True
                parent[v] = u
                queue.append(v)
    load = base.copy()
    for u in reversed(order[1:]):
        load[parent[u]] += load[u]

    hops_from_inlet = np.zeros(n_nodes)
    for u in order[1:]:
        hops_from_inlet[u] = hops_from_inlet[parent[u]] + length[tuple(sorted((u, int(parent[u]))))]
    elevation = 40.0 - 0.004 * hops_from_inlet + rng.normal(0.0, 0.5, n_nodes)

    pipes = []
    for k, (i, j) in enumerate(chosen):
        if parent[j] == i:
            carried = load[j]
        elif parent[i] == j:
            carried = load[i]
        else:
            carried = 0.5 * min(load[i], load[j])
        # target velocity at the carried flow, clipped to the commercial range
        need = np.sqrt(4.0 * max(carried, 0.05) / 1000.0 / np.pi / design_velocity)
        diameter = float(COMMERCIAL_DIAMETERS[np.searchsorted(COMMERCIAL_DIAMETERS, need).clip(0, len(COMMERCIAL_DIAMETERS) - 1)])
        roughness = float(rng.choice([100.0, 110.0, 120.0, 130.0, 140.0]))
        pipes.append(Pipe(f"P{k}", i, j, round(length[(i, j)] * 1.05 + 1.0, 2), diameter, roughness))

    nodes = [
        Node(f"J{i}", round(float(elevation[i]), 3), i == 0, inlet_head if i == 0 else None,
             round(float(base[i]), 4))
        for i in range(n_nodes)
    ]
    nodes[0] = Node("R0", round(float(elevation[0]), 3), True, inlet_head, 0.0)
    return NetworkModel(tuple(nodes), tuple(pipes), name or f"desk-{n_nodes}-{seed}")


def farthest_point_nodes(network: NetworkModel, count: int, start: list[int]) -> list[int]:
    """Greedy k-center selection in pipe-length distance, seeded with ``start``."""
    dist = distance_matrix(network, "meters")
    chosen = list(start)
    if not chosen:
        chosen = [0]
    best = dist[chosen].min(axis=0)
    while len(chosen) < count:
        nxt = int(np.argmax(best))
        if best[nxt] <= 0:
            break
        chosen.append(nxt)
        best = np.minimum(best, dist[nxt])
    return chosen


def desk_layout(network: NetworkModel, seed: int, *, pressure_fraction: float = 0.15,
                amr_fraction: float = 0.15, amr_placement: str = "random") -> SensorLayout:
    """Pressure sensors at inlets plus a spread-out k-center set; random AMRs; inlet flow meters."""
    rng = np.random.default_rng([seed, 7])
    n = network.n
    inlets = network.inlets
    n_p = max(len(inlets) + 1, int(round(pressure_fraction * n)))
    pressure = farthest_point_nodes(network, n_p, inlets)
    candidates = [i for i in range(n) if i not in inlets]
    n_a = max(1, int(round(amr_fraction * n)))
    if amr_placement == "spread":
        amr = sorted(farthest_point_nodes(network, len(pressure) + n_a, pressure)[len(pressure):])
    else:
        amr = sorted(int(i) for i in rng.choice(candidates, size=min(n_a, len(candidates)), replace=False))
    flow = sorted({k for k, (a, b) in enumerate(network.endpoints) if a in inlets or b in inlets})
    return SensorLayout(tuple(sorted(pressure)), tuple(amr), tuple(flow))


def leak_batch(network: NetworkModel, layout: SensorLayout, count: int, seed: int, *,
               rate_range: tuple[float, float] = (2.0, 6.0)) -> list[LeakScenario]:
    """Leaks on pipes whose endpoints carry neither AMRs nor inlets."""
    rng = np.random.default_rng([seed, 11])
    blocked = set(layout.amr_nodes) | set(network.inlets)
    eligible = [k for k, (a, b) in enumerate(network.endpoints) if a not in blocked and b not in blocked]
    picks = rng.choice(eligible, size=min(count, len(eligible)), replace=False)
    out = []
    for idx, k in enumerate(picks):
        out.append(LeakScenario(
            leak_pipe=int(k),
            leak_rate=round(float(rng.uniform(*rate_range)), 3),
            base_demand_seed=derive_seed(seed, idx),
            timestamp_label=f"t{idx:03d}",
            scenario_id=f"S{idx:03d}",
        ))
    return out
