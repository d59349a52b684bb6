import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hydrofuse.errors import StructuralError, ValidationError
from hydrofuse.network import (NetworkModel, Node, Pipe, SensorLayout, build_structural, distance_matrix,
                               resistance_coefficient, selection_matrix, shortest_path_hops,
                               shortest_path_meters)

from conftest import make_network

# 10.67 * 100 / (130^1.852 * 0.3^4.87), evaluated with mpmath at 40 digits
TAU_FIXTURE = 45.6626193621


class TestStructuralMatrices:
    def test_single_edge(self):
        net = make_network(2, [(0, 1)], lengths=[1000.0])
        s = build_structural(net)
        np.testing.assert_array_equal(s.incidence, [[1.0, -1.0]])
        assert s.adjacency[0, 1] == pytest.approx(1e-3)
        np.testing.assert_allclose(np.diag(s.degree), [1e-3, 1e-3])
        np.testing.assert_allclose(s.laplacian, [[1e-3, -1e-3], [-1e-3, 1e-3]])

    def test_tau_matches_high_precision_value(self):
        tau = float(resistance_coefficient(100.0, 0.3, 130.0))
        assert tau == pytest.approx(TAU_FIXTURE, rel=1e-11)

    def test_triangle_laplacian_spectrum(self):
        net = make_network(3, [(0, 1), (1, 2), (0, 2)], lengths=[100.0, 200.0, 300.0])
        L = build_structural(net).laplacian
        np.testing.assert_allclose(L.sum(axis=1), 0.0, atol=1e-15)
        eig = np.sort(np.linalg.eigvalsh(L))
        assert abs(eig[0]) < 1e-15
        assert eig[1] > 0 and eig[2] > 0

    def test_matrices_are_read_only(self, path3):
        s = build_structural(path3)
        with pytest.raises(ValueError):
            s.laplacian[0, 0] = 1.0

    def test_resistance_is_tau_in_litre_units(self, path3):
        s = build_structural(path3)
        np.testing.assert_allclose(s.resistance, s.tau * 1000.0 ** -1.852)


class TestValidation:
    def test_self_loop_rejected(self):
        with pytest.raises(ValidationError, match="self-loop"):
            make_network(2, [(0, 0)])

    def test_parallel_pipe_rejected(self):
        with pytest.raises(ValidationError, match="duplicates"):
            make_network(2, [(0, 1), (1, 0)])

    def test_disconnected(self):
        with pytest.raises(StructuralError, match="disconnected"):
            make_network(4, [(0, 1), (2, 3)])

    def test_no_inlet(self):
        with pytest.raises(ValidationError, match="inlet"):
            make_network(2, [(0, 1)], inlets=())

    @pytest.mark.parametrize("attr", ["length", "diameter", "roughness"])
    def test_nonpositive_attribute(self, attr):
        kw = dict(length=10.0, diameter=0.2, roughness=100.0)
        kw[attr] = 0.0
        nodes = (Node("a", is_inlet=True, inlet_head=10.0), Node("b"))
        with pytest.raises(ValidationError, match=attr):
            NetworkModel(nodes, (Pipe("p", 0, 1, **kw),))

    def test_duplicate_ids(self):
        with pytest.raises(ValidationError, match="node ids"):
            NetworkModel((Node("a", is_inlet=True), Node("a")), (Pipe("p", 0, 1, 1.0, 0.1, 100.0),))


class TestTransforms:
    def test_remove_node_drops_incident_pipes(self):
        net = make_network(4, [(0, 1), (1, 2), (1, 3)])
        out = net.remove_nodes(["N3"])
        assert out.n == 3 and out.m == 2
        assert [p.id for p in out.pipes] == ["P0", "P1"]

    def test_with_inlets_exclusive(self, path3):
        out = path3.with_inlets({"N2": 50.0})
        assert out.inlets == [2]
        assert out.inlet_heads() == {2: 50.0}

    def test_with_inlets_keep_existing(self, path3):
        out = path3.with_inlets({"N2": 50.0}, exclusive=False)
        assert out.inlets == [0, 2]


class TestSelection:
    def test_single_row(self):
        np.testing.assert_array_equal(selection_matrix([1], 3), [[0, 1, 0]])

    def test_empty(self):
        assert selection_matrix([], 3).shape == (0, 3)

    def test_two_rows(self):
        np.testing.assert_array_equal(selection_matrix([0, 2], 3), [[1, 0, 0], [0, 0, 1]])

    def test_duplicates_and_range(self):
        with pytest.raises(ValidationError):
            selection_matrix([1, 1], 3)
        with pytest.raises(ValidationError):
            selection_matrix([3], 3)

    def test_layout_check(self, path3):
        with pytest.raises(ValidationError, match="pressure_nodes"):
            SensorLayout((5,)).check(path3)


def brute_force_distances(n, edges, weights):
    """Minimum over every simple path, enumerated by DFS."""
    adj = {i: [] for i in range(n)}
    for (a, b), w in zip(edges, weights):
        adj[a].append((b, w))
        adj[b].append((a, w))
    best = np.full((n, n), np.inf)

    def walk(start, node, seen, total):
        best[start, node] = min(best[start, node], total)
        for nxt, w in adj[node]:
            if nxt not in seen:
                walk(start, nxt, seen | {nxt}, total + w)

    for s in range(n):
        walk(s, s, {s}, 0.0)
    return best


@st.composite
def connected_graphs(draw, max_n=6):
    n = draw(st.integers(2, max_n))
    tree = [(draw(st.integers(0, i - 1)), i) for i in range(1, n)]
    extra_pool = [e for e in itertools.combinations(range(n), 2) if e not in tree and e[::-1] not in tree]
    extra = draw(st.lists(st.sampled_from(extra_pool), unique=True, max_size=4)) if extra_pool else []
    edges = tree + extra
    lengths = draw(st.lists(st.integers(1, 500), min_size=len(edges), max_size=len(edges)))
    return n, edges, [float(x) for x in lengths]


class TestShortestPaths:
    def test_same_node(self, path3):
        assert shortest_path_hops(path3, 1, 1) == 0
        assert shortest_path_meters(path3, 1, 1) == 0.0

    def test_path_graph(self, path3):
        assert shortest_path_hops(path3, 0, 2) == 2
        assert shortest_path_meters(path3, 0, 2) == 200.0

    @settings(max_examples=40, deadline=None)
    @given(connected_graphs())
    def test_matches_path_enumeration(self, graph):
        n, edges, lengths = graph
        net = make_network(n, edges, lengths=lengths)
        np.testing.assert_allclose(distance_matrix(net, "meters"), brute_force_distances(n, edges, lengths))
        np.testing.assert_allclose(distance_matrix(net, "hops"), brute_force_distances(n, edges, [1.0] * len(edges)))

    def test_unknown_unit(self, path3):
        with pytest.raises(ValidationError):
            distance_matrix(path3, "feet")
