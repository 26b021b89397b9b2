import numpy as np
import pytest

from qgeo.connection import ConnectionCoeffs, GraphMetric, build_connection, enumerate_configs
from qgeo.connection import torsion_free_from_Q
from qgeo.graph import DirectedGraph


def random_tree(rng, n):
    return DirectedGraph.from_edges(n, [(i, int(rng.integers(0, i))) for i in range(1, n)])


def random_metric(rng, graph, lo=0.5, hi=2.0):
    return GraphMetric(graph, rng.uniform(lo, hi, graph.n_arrows))


def random_Q(rng, graph):
    Q = rng.normal(size=graph.n_arrows) + 1j * rng.normal(size=graph.n_arrows)
    return 0.5 * (Q + np.conj(Q[graph.reverse]))


def random_hermitian_coeffs(rng, graph):
    """Arbitrary coefficients paired so the hermitian condition holds."""
    squares, triangles = enumerate_configs(graph)
    L, N = {}, {}
    for x, y, z, u in squares:
        if (x, y, z, u) in L:
            continue
        v = complex(rng.normal(), rng.normal())
        L[(x, y, z, u)] = v
        L[(z, u, x, y)] = np.conj(v)
    for x, y, z in triangles:
        if (x, y, z) in N:
            continue
        v = complex(rng.normal(), rng.normal())
        N[(x, y, z)] = v
        N[(z, y, x)] = np.conj(v)
    return ConnectionCoeffs(L, N)


def random_torsion_free(rng, graph):
    m = random_metric(rng, graph)
    b = rng.normal(size=graph.n)
    return build_connection(m, torsion_free_from_Q(m, random_Q(rng, graph), b))


# graphs without nondegenerate squares, so any metric passes the square condition
GRAPHS = {
    "star3": DirectedGraph.star(3),
    "path5": DirectedGraph.from_edges(5, [(i, i + 1) for i in range(4)]),
    "triangle": DirectedGraph.complete(3),
    "cycle5": DirectedGraph.cycle(5),
    "tree7": random_tree(np.random.default_rng(7), 7),
}


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(params=sorted(GRAPHS))
def graph(request):
    return GRAPHS[request.param]


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
