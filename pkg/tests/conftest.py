import numpy as np
import pytest

from hydrofuse.network import HW_COEFFICIENT, HW_EXPONENT, LPS_RESISTANCE_FACTOR, NetworkModel, Node, Pipe, SensorLayout
from hydrofuse.synthetic import desk_layout, random_network

DIAMETER = 0.3
ROUGHNESS = 130.0


def length_for_resistance(r_lps: float) -> float:
    """Pipe length giving resistance ``r_lps`` (flows in L/s) at the default diameter/roughness."""
    tau = r_lps / LPS_RESISTANCE_FACTOR
    return tau * ROUGHNESS ** HW_EXPONENT * DIAMETER ** 4.87 / HW_COEFFICIENT


def make_network(n, edges, *, inlets=(0,), inlet_head=100.0, lengths=None, resistances=None,
                 elevations=None, name="fixture"):
    """Network from an edge list; pipe lengths either given or derived from target resistances."""
    nodes = []
    for i in range(n):
        is_inlet = i in inlets
        elev = 0.0 if elevations is None else float(elevations[i])
        nodes.append(Node(f"N{i}", elev, is_inlet, inlet_head if is_inlet else None))
    pipes = []
    for k, (a, b) in enumerate(edges):
        if resistances is not None:
            length = length_for_resistance(resistances[k])
        else:
            length = 100.0 if lengths is None else float(lengths[k])
        pipes.append(Pipe(f"P{k}", a, b, length, DIAMETER, ROUGHNESS))
    return NetworkModel(tuple(nodes), tuple(pipes), name)


def random_tree_edges(n, rng):
    return [(int(rng.integers(0, i)), i) for i in range(1, n)]


@pytest.fixture
def path3():
    """a - b - c with 100 m pipes, inlet at a."""
    return make_network(3, [(0, 1), (1, 2)])


@pytest.fixture(scope="session")
def desk_case():
    net = random_network(40, 5)
    return net, desk_layout(net, 5)


@pytest.fixture
def full_layout():
    def build(net):
        return SensorLayout(tuple(range(net.n)), (), ())
    return build


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
