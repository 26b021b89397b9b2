import numpy as np
import pytest

from conftest import GRAPHS, random_hermitian_coeffs, random_metric, random_Q, random_torsion_free
from qgeo.connection import (Connection, ConnectionCoeffs, GraphMetric, HermiticityError,
                             SquareConditionError, build_connection, coeffs_from_k, format_key,
                             hermitian_residual, hermiticity_defects, k_matrix, metric_tensor_nabla,
                             parse_key, qlc_residual, square_metric_condition, star_compat_dense,
                             star_compat_residual, star_preserving_direct, star_preserving_formula,
                             torsion_free_from_Q, torsion_residual)
from qgeo.graph import DirectedGraph, act2, bimodule_act, differential, max_abs, tensor
from qgeo.star import solve_star


def rand_c(rng, n):
    return rng.normal(size=n) + 1j * rng.normal(size=n)


def random_connection(rng, graph):
    return Connection(random_metric(rng, graph), random_hermitian_coeffs(rng, graph))


def dense_metric_nabla(conn):
    """nabla(g) from dense vertex-indexed arrays: W[x, y] holds the w_{x->y} coefficient."""
    g, n = conn.graph, conn.graph.n
    nab, S = conn.nabla.toarray(), conn.sigma.toarray()
    P = g.paths2
    Nab = np.zeros((n, n, n, n, n), dtype=complex)      # [x, y] -> 2-tensor [p, q, r]
    for a, (x, y) in enumerate(g.arrows):
        for k, (p, q, r) in enumerate(P):
            Nab[x, y, p, q, r] = nab[k, a]
    Sig = np.zeros((n,) * 6, dtype=complex)              # [p, q, r] -> [p', q', r']
    for j, (p, q, r) in enumerate(P):
        for k, (a, b, c) in enumerate(P):
            Sig[p, q, r, a, b, c] = S[k, j]
    G = np.zeros((n, n))
    for a, (x, y) in enumerate(g.arrows):
        G[x, y] = conn.metric.g[a]
    # first term: nabla(w_{x->y}) (x) w_{y->x}
    out = np.einsum("sr,srpqr->pqrs", G, Nab)
    # second term: (sigma (x) id)(w_{x->y} (x) nabla(w_{y->x}))
    out = out + np.einsum("xy,yxyrs,xyrabc->abcs", G, Nab, Sig)
    return {p: out[p] for p in g.paths3}, out


@pytest.mark.parametrize("name", sorted(GRAPHS))
def test_hermiticity_identity(name, rng):
    graph = GRAPHS[name]
    m = random_metric(rng, graph)
    c = random_hermitian_coeffs(rng, graph)
    assert hermitian_residual(m, c) < 1e-12
    assert max(d for _, d in hermiticity_defects(m, c)) < 1e-12
    # break one coefficient: the dense residual sees exactly the same defect
    key = next(iter(c.L))
    c.L[key] += 0.3j
    d = max(d for _, d in hermiticity_defects(m, c))
    assert d > 0.01
    assert hermitian_residual(m, c) == pytest.approx(d, rel=1e-12)
    with pytest.raises(HermiticityError) as exc:
        build_connection(m, c)
    assert format_key(exc.value.key) in str(exc.value)


@pytest.mark.parametrize("name", sorted(GRAPHS))
def test_k_round_trip(name, rng):
    graph = GRAPHS[name]
    m = random_metric(rng, graph)
    c = random_hermitian_coeffs(rng, graph)
    c2 = coeffs_from_k(m, k_matrix(m, c))
    assert max(abs(c.L[k] - c2.L[k]) for k in c.L) < 1e-12
    assert max((abs(c.N[k] - c2.N[k]) for k in c.N), default=0) < 1e-12


def test_key_format_round_trip():
    for key in [(0, 1, 2, 3), (3, 1, 0, 2), (0, 2, 1)]:
        assert parse_key(format_key(key)) == key


@pytest.mark.parametrize("name", sorted(GRAPHS))
def test_left_and_right_leibniz(name, rng):
    graph = GRAPHS[name]
    conn = random_connection(rng, graph)
    f, w = rand_c(rng, graph.n), rand_c(rng, graph.n_arrows)
    df = differential(graph, f)
    lhs = conn.nabla_apply(bimodule_act(graph, f, w))
    rhs = tensor(graph, df, w) + act2(graph, f, conn.nabla_apply(w))
    assert max_abs(lhs - rhs) < 1e-12
    lhs = conn.nabla_apply(bimodule_act(graph, f, w, "right"))
    rhs = act2(graph, f, conn.nabla_apply(w), "right") + conn.sigma_apply(tensor(graph, w, df))
    assert max_abs(lhs - rhs) < 1e-12


@pytest.mark.parametrize("name", sorted(GRAPHS))
def test_star_compat_formula_matches_dense(name, rng):
    conn = random_connection(rng, GRAPHS[name])
    a, b = star_compat_residual(conn), star_compat_dense(conn)
    assert a > 1e-3
    assert a == pytest.approx(b, rel=1e-12)


@pytest.mark.parametrize("name", sorted(GRAPHS))
def test_metric_nabla_dense_oracle(name, rng):
    conn = random_connection(rng, GRAPHS[name])
    fast = metric_tensor_nabla(conn)
    dense, full = dense_metric_nabla(conn)
    assert max(abs(fast[p] - dense[p]) for p in fast) < 1e-12
    # nothing lands outside length-3 paths
    mask = np.zeros(full.shape, bool)
    for p in conn.graph.paths3:
        mask[p] = True
    assert np.abs(full[~mask]).max(initial=0) < 1e-12


@pytest.mark.parametrize("name", sorted(GRAPHS))
def test_torsion_free_family(name, rng):
    graph = GRAPHS[name]
    conn = random_torsion_free(rng, graph)
    assert torsion_residual(conn) < 1e-12
    assert hermitian_residual(conn.metric, conn.coeffs) < 1e-12
    assert torsion_residual(random_connection(rng, graph)) > 1e-3


def test_torsion_free_rejects_bad_Q(rng):
    graph = GRAPHS["star3"]
    m = random_metric(rng, graph)
    with pytest.raises(ValueError, match="Q must satisfy"):
        torsion_free_from_Q(m, rand_c(rng, graph.n_arrows))


def test_square_condition():
    g = DirectedGraph.cycle(4)
    assert square_metric_condition(GraphMetric(g, np.ones(g.n_arrows))) == []
    vals = np.ones(g.n_arrows)
    vals[g.index[(1, 0)]] = 2.0
    m = GraphMetric(g, vals)
    bad = square_metric_condition(m)
    assert bad
    with pytest.raises(SquareConditionError):
        torsion_free_from_Q(m, np.zeros(g.n_arrows))


@pytest.mark.parametrize("n", [2, 3, 4])
def test_star_preserving_routes_agree_on_qlc(n):
    for sol in solve_star(n):
        conn = sol.connection
        assert star_preserving_formula(conn) < 1e-12
        assert star_preserving_direct(conn) < 1e-12


def test_star_preserving_routes_agree_off_qlc(rng):
    graph = GRAPHS["triangle"]
    conn = random_torsion_free(rng, graph)
    assert star_preserving_formula(conn) > 1e-3
    assert star_preserving_direct(conn) > 1e-3


def test_metric_validation():
    g = DirectedGraph.star(2)
    with pytest.raises(Exception):
        GraphMetric(g, np.ones(3))
    with pytest.raises(Exception):
        GraphMetric(g, np.array([1, 0, 1, 1.0]))
    with pytest.raises(Exception):
        GraphMetric(DirectedGraph(2, ((0, 1),)), np.ones(1))


def test_connection_json_round_trip(rng):
    conn = random_torsion_free(rng, GRAPHS["triangle"])
    back = Connection.from_json(conn.to_json())
    assert max_abs((back.nabla - conn.nabla).toarray()) < 1e-15
    r = qlc_residual(back)
    assert r.torsion < 1e-12


def test_missing_configuration_rejected():
    g = DirectedGraph.star(2)
    m = GraphMetric(g, np.ones(g.n_arrows))
    with pytest.raises(Exception, match="not a configuration"):
        build_connection(m, ConnectionCoeffs({(0, 1, 0, 1): 1.0}))
