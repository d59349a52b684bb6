import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hydrofuse.errors import OrientationError, SolverError, ValidationError
from hydrofuse.hydraulics import (HW_EXPONENT, LeakScenario, NoiseSpec, estimate_incidence, generate_scenario,
                                  hazen_williams_flow, leak_demand, nodal_balance, nominal_demands,
                                  signed_flows, solve_steady_state)
from hydrofuse.network import SensorLayout, build_structural
from hydrofuse.synthetic import desk_layout, random_network

from conftest import make_network, random_tree_edges

# 2 ** (1 / 1.852) via mpmath
TWO_POW_FLOW_EXP = 1.45392898376
RESIDUAL_TOL = 1e-8


def hw_residuals(net, state):
    s = build_structural(net)
    B = estimate_incidence(state.heads, net)
    energy = s.resistance * state.flows ** HW_EXPONENT - B @ state.heads
    free = [i for i in range(net.n) if i not in net.inlet_heads()]
    mass = nodal_balance(state.flows, B)[free] - state.demands[free]
    return float(np.max(np.abs(energy))), float(np.max(np.abs(mass)))


class TestHazenWilliamsFlow:
    def test_unit_drop(self):
        assert hazen_williams_flow([1.0, 0.0], [[1, -1]], [1.0])[0] == pytest.approx(1.0)

    def test_drop_of_two(self):
        assert hazen_williams_flow([2.0, 0.0], [[1, -1]], [1.0])[0] == pytest.approx(TWO_POW_FLOW_EXP, rel=1e-11)

    def test_zero_drop(self):
        assert hazen_williams_flow([3.0, 3.0], [[1, -1]], [1.0])[0] == 0.0

    def test_negative_drop_names_pipe(self):
        with pytest.raises(OrientationError, match="pipe 0"):
            hazen_williams_flow([0.0, 1.0], [[1, -1]], [1.0])

    def test_matrix_resistance_accepted(self):
        q = hazen_williams_flow([4.0, 0.0], [[1, -1]], np.array([[2.0]]))
        assert q[0] == pytest.approx(2.0 ** (1 / 1.852))


class TestNodalBalance:
    def test_single_pipe(self):
        np.testing.assert_array_equal(nodal_balance([1.0], [[1, -1]]), [-1.0, 1.0])

    def test_circulation(self):
        B = np.array([[1, -1, 0], [0, 1, -1], [-1, 0, 1]], dtype=float)
        np.testing.assert_allclose(nodal_balance([2.0, 2.0, 2.0], B), 0.0)

    def test_random_tree_matches_hand_sum(self, rng):
        n = 9
        edges = random_tree_edges(n, rng)
        q = rng.uniform(0, 3, len(edges))
        B = np.zeros((len(edges), n))
        for k, (a, b) in enumerate(edges):
            B[k, a], B[k, b] = 1, -1
        expected = np.zeros(n)
        for k, (a, b) in enumerate(edges):
            expected[a] -= q[k]
            expected[b] += q[k]
        np.testing.assert_allclose(nodal_balance(q, B), expected)


class TestIncidence:
    def test_first_branch(self):
        net = make_network(2, [(0, 1)])
        np.testing.assert_array_equal(estimate_incidence([2.0, 1.0], net), [[1, -1]])

    def test_second_branch(self):
        net = make_network(2, [(0, 1)])
        np.testing.assert_array_equal(estimate_incidence([1.0, 2.0], net), [[-1, 1]])

    def test_tie_is_deterministic(self):
        net = make_network(2, [(0, 1)], elevations=[0.0, 5.0])
        B = estimate_incidence([3.0, 3.0], net)
        np.testing.assert_array_equal(B, [[-1, 1]])  # higher elevation wins the tie
        assert (B @ [3.0, 3.0])[0] == 0.0


def bisect(f, lo, hi, iters=200):
    """Root of a decreasing function on [lo, hi]."""
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if f(mid) > 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def signed_q(dh, r):
    return np.sign(dh) * (abs(dh) / r) ** (1 / 1.852)


class TestSteadyState:
    def test_no_demand_flat(self):
        net = make_network(2, [(0, 1)])
        s = solve_steady_state(net, demands=np.zeros(2))
        np.testing.assert_allclose(s.heads, [100.0, 100.0], atol=1e-12)
        assert s.flows[0] == pytest.approx(0.0, abs=1e-12)

    def test_single_pipe_inverts_analytically(self):
        net = make_network(2, [(0, 1)], resistances=[1.0])
        s = solve_steady_state(net, demands=np.array([0.0, 1.0]))
        np.testing.assert_allclose(s.heads, [100.0, 99.0], atol=1e-10)
        assert s.flows[0] == pytest.approx(1.0, abs=1e-10)
        assert s.demands[0] == pytest.approx(-1.0, abs=1e-10)

    def test_three_node_loop_matches_bisection(self):
        r01, r02, r12 = 2.0, 3.0, 1.0
        c1, c2 = 1.5, 2.5
        net = make_network(3, [(0, 1), (0, 2), (1, 2)], resistances=[r01, r02, r12])
        s = solve_steady_state(net, demands=np.array([0.0, c1, c2]))
        h0 = 100.0

        def h2_given(h1):
            return bisect(lambda h2: signed_q(h0 - h2, r02) + signed_q(h1 - h2, r12) - c2, h0 - 200, h0 + 1)

        def node1(h1):
            return signed_q(h0 - h1, r01) - signed_q(h1 - h2_given(h1), r12) - c1

        h1 = bisect(node1, h0 - 200, h0 + 1)
        h2 = h2_given(h1)
        np.testing.assert_allclose(s.heads, [h0, h1, h2], atol=1e-6)

    def test_random_networks_residuals(self):
        for seed in range(3):
            net = random_network(60, seed)
            c = nominal_demands(net, seed)
            state = solve_steady_state(net, demands=c)
            energy, mass = hw_residuals(net, state)
            assert energy < RESIDUAL_TOL and mass < RESIDUAL_TOL

    def test_dead_end_without_demand(self):
        net = make_network(4, [(0, 1), (1, 2), (1, 3)], resistances=[1.0, 1.0, 1.0])
        state = solve_steady_state(net, demands=np.array([0.0, 1.0, 2.0, 0.0]))
        assert state.flows[2] == pytest.approx(0.0, abs=1e-9)
        assert state.heads[3] == pytest.approx(state.heads[1], abs=1e-9)

    def test_non_convergence_reports_residual(self):
        net = random_network(30, 1)
        with pytest.raises(SolverError) as err:
            solve_steady_state(net, demands=nominal_demands(net, 1), max_iter=1)
        assert err.value.residual > 0

    def test_bad_inputs(self):
        net = make_network(2, [(0, 1)])
        with pytest.raises(ValidationError):
            solve_steady_state(net, demands=np.zeros(3))
        with pytest.raises(ValidationError):
            solve_steady_state(net, demands=np.array([0.0, -1.0]))
        with pytest.raises(ValidationError):
            solve_steady_state(net, inlet_heads={}, demands=np.zeros(2))

    @settings(max_examples=15, deadline=None)
    @given(st.integers(4, 12), st.integers(0, 10_000))
    def test_tree_flows_equal_downstream_demand(self, n, seed):
        rng = np.random.default_rng(seed)
        edges = random_tree_edges(n, rng)
        net = make_network(n, edges, resistances=rng.uniform(0.01, 0.1, n - 1).tolist())
        c = np.concatenate([[0.0], rng.uniform(0.0, 1.0, n - 1)])
        state = solve_steady_state(net, demands=c)
        # on a tree each pipe carries the demand of the subtree below it
        below = c.copy()
        for k in reversed(range(n - 1)):
            a, b = edges[k]
            below[a] += below[b]
        np.testing.assert_allclose(state.flows, below[1:], atol=1e-8)

    def test_signed_flows_follow_file_orientation(self):
        net = make_network(2, [(1, 0)], resistances=[1.0])
        state = solve_steady_state(net, demands=np.array([0.0, 1.0]))
        assert signed_flows(state, net)[0] == pytest.approx(-1.0)


@pytest.fixture(scope="module")
def case():
    net = random_network(40, 2)
    return net, desk_layout(net, 2)


class TestScenarioGeneration:
    def test_no_leak_noiseless_selects_truth(self, case):
        net, lay = case
        state, meas = generate_scenario(net, lay, LeakScenario(3, 0.0, 9), NoiseSpec())
        np.testing.assert_array_equal(meas.heads, state.heads[list(lay.pressure_nodes)])
        np.testing.assert_array_equal(meas.demands, state.demands[list(lay.amr_nodes)])
        np.testing.assert_array_equal(meas.flows, state.flows[list(lay.flow_pipes)])

    def test_leak_adds_exact_consumption(self, case):
        net, lay = case
        base, _ = generate_scenario(net, lay, LeakScenario(3, 0.0, 9))
        leak, _ = generate_scenario(net, lay, LeakScenario(3, 5.0, 9))
        free = [i for i in range(net.n) if i not in net.inlets]
        assert leak.demands[free].sum() - base.demands[free].sum() == pytest.approx(5.0, abs=1e-9)
        inflow = -leak.demands[net.inlets].sum() + base.demands[net.inlets].sum()
        assert inflow == pytest.approx(5.0, abs=1e-7)

    def test_leak_split_on_endpoints(self, case):
        net, _ = case
        extra = leak_demand(net, 4, 3.0)
        a, b = net.endpoints[4]
        assert extra[a] == extra[b] == 1.5 and extra.sum() == 3.0

    def test_seed_determinism(self, case):
        net, lay = case
        noise = NoiseSpec(0.01, 0.01, 0.01)
        one = generate_scenario(net, lay, LeakScenario(3, 2.0, 17), noise)
        two = generate_scenario(net, lay, LeakScenario(3, 2.0, 17), noise)
        for x, y in zip(one[1].__dict__.values(), two[1].__dict__.values()):
            assert np.array_equal(x, y)
        assert np.array_equal(one[0].heads, two[0].heads)

    def test_leak_pipe_range(self, case):
        net, lay = case
        with pytest.raises(ValidationError):
            generate_scenario(net, lay, LeakScenario(net.m, 1.0, 0))

    def test_negative_leak_rejected(self):
        with pytest.raises(ValidationError):
            LeakScenario(0, -1.0, 0)

    def test_layout_checked(self, case):
        net, _ = case
        with pytest.raises(ValidationError):
            generate_scenario(net, SensorLayout((net.n + 3,)), LeakScenario(0, 1.0, 0))
