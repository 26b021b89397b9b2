import numpy as np
import pytest

from qgeo import geodesic as ge
from qgeo.cayley import (GroupError, GroupSpec, SupportError, UnsupportedTwist, alpha_part,
                         amplitude_rhs_cayley, arrow_map, bimodule_defect, cayley_force,
                         cayley_free_rhs, cayley_graph, div_cayley, div_int_cayley,
                         divergence_compat_cayley, from_arrows, h_from_g, hermitian_check_cayley,
                         hermitian_dense_cayley, left_connection_matrix, nabla_X_cayley, random_xi,
                         reality_defect_cayley, sigma_cayley, star_compat_cayley, star_vf_cayley,
                         support_mask, support_violations, to_arrows, to_graph_connection,
                         torsion_check_cayley, velocity_rhs_cayley)
from qgeo.connection import qlc_residual, star_compat_dense, torsion_residual


def s3_four():
    """S_3 with two transpositions and their two products as generators."""
    S = GroupSpec.symmetric3()
    t1, t2 = S.generators[:2]
    return GroupSpec(S.table, (t1, t2, S.mul(t1, t2), S.mul(t2, t1)))


def lattice_xi(G, gv):
    N = G.order
    rho = np.roll(gv, -1) / gv
    Xi = np.zeros((2, 2, 2, N), dtype=complex)
    Xi[0, 0, 0] = rho
    Xi[0, 1, 0] = 1
    Xi[1, 1, 1] = np.roll(1 / rho, 2)
    Xi[1, 0, 1] = 1
    return Xi, np.array([gv, np.roll(gv, 1)])


GROUPS = {"z5": lambda: GroupSpec.cyclic(5), "s3": GroupSpec.symmetric3, "z4": lambda: GroupSpec.cyclic(4),
          "s3four": s3_four}


def rand_c(rng, shape):
    return rng.normal(size=shape) + 1j * rng.normal(size=shape)


def test_group_validation():
    with pytest.raises(GroupError, match="square"):
        GroupSpec(np.zeros((2, 3), int), (1,))
    with pytest.raises(GroupError, match="permutations"):
        GroupSpec(np.array([[0, 1], [0, 1]]), (1,))
    with pytest.raises(GroupError, match="identity cannot"):
        GroupSpec.cyclic(5, (0, 1, 4))
    with pytest.raises(GroupError, match="inversion"):
        GroupSpec.cyclic(5, (1,))
    # a latin square that is not associative
    bad = np.array([[0, 1, 2, 3, 4], [1, 0, 3, 4, 2], [2, 4, 0, 1, 3], [3, 2, 4, 0, 1], [4, 3, 1, 2, 0]])
    with pytest.raises(GroupError, match="associative"):
        GroupSpec(bad, (1,))


def test_group_basics_and_json():
    S = GroupSpec.symmetric3()
    assert S.order == 6 and S.k == 3 and not S.abelian
    for a in range(6):
        assert S.mul(a, int(S.inverse[a])) == S.identity
    assert GroupSpec.from_json(S.to_json()).generators == S.generators
    Z = GroupSpec.from_json({"cyclic": 7})
    assert Z.generators == (1, 6) and Z.abelian
    with pytest.raises(GroupError):
        GroupSpec.from_json({"table": [[0]]})
    # R_a R_b = R_{ab}
    f = np.arange(6.0) ** 2
    a, b = 1, 4
    assert np.array_equal(S.shift(S.shift(f, b), a), S.shift(f, S.mul(a, b)))
    assert S.is_class_function(np.array([1.0 if x == S.identity else 2.0 for x in range(6)]))
    assert not S.is_class_function(np.arange(6.0))


@pytest.mark.parametrize("name", sorted(GROUPS))
def test_arrow_mapping(name, rng):
    G = GROUPS[name]()
    graph = cayley_graph(G)
    assert graph.n_arrows == G.k * G.order
    A = arrow_map(G)
    for i, a in enumerate(G.generators):
        for x in range(G.order):
            assert graph.arrows[A[i, x]] == (x, G.mul(x, a))
    X = rand_c(rng, (G.k, G.order))
    assert np.array_equal(from_arrows(G, to_arrows(G, X)), X)


@pytest.mark.parametrize("name", sorted(GROUPS))
def test_bimodule_and_dense_routes(name, rng):
    G = GROUPS[name]()
    Xi = random_xi(G, rng)
    g = rng.uniform(0.5, 2, (G.k, G.order))
    conn = to_graph_connection(G, Xi, g)
    assert np.abs(left_connection_matrix(G, Xi) - conn.nabla.toarray()).max() < 1e-13
    assert bimodule_defect(G, Xi) < 1e-12
    assert star_compat_cayley(G, Xi) == pytest.approx(star_compat_dense(conn), rel=1e-12)
    assert torsion_check_cayley(G, Xi) == pytest.approx(torsion_residual(conn), rel=1e-12)
    h = h_from_g(G, g)
    assert hermitian_check_cayley(G, h, Xi) == pytest.approx(hermitian_dense_cayley(G, h, Xi), rel=1e-12)


def test_support_rules(rng):
    G = s3_four()
    assert not support_mask(G).all()
    Xi = random_xi(G, rng, supported=False)
    bad = support_violations(G, Xi)
    assert bad
    assert bimodule_defect(G, Xi) > 1e-2
    with pytest.raises(SupportError):
        sigma_cayley(G, Xi)
    assert support_violations(G, random_xi(G, rng)) == []
    # on Z_4 the generators +-1 place no restriction; on Z_6 only Xi^+_{--} and Xi^-_{++} go
    assert support_mask(GroupSpec.cyclic(4)).all()
    m6 = support_mask(GroupSpec.cyclic(6))
    assert list(zip(*np.nonzero(~m6))) == [(0, 1, 1), (1, 0, 0)]


def test_alpha_entries_only_where_cd_is_a(rng):
    G = s3_four()
    Xi = random_xi(G, rng)
    mask = alpha_part(G, Xi)
    assert mask.any()
    conn = to_graph_connection(G, Xi, np.ones((G.k, G.order)))
    assert len(conn.coeffs.N) > 0
    # the lattice QLC on Z_N never uses them
    Z = GroupSpec.cyclic(7)
    assert not alpha_part(Z, np.zeros((2, 2, 2, 7))).any()


def test_lattice_qlc_through_cayley(rng):
    G = GroupSpec.cyclic(7)
    Xi, g = lattice_xi(G, rng.uniform(0.5, 2, 7))
    h = h_from_g(G, g)
    assert hermitian_check_cayley(G, h, Xi) < 1e-12
    assert hermitian_dense_cayley(G, h, Xi) < 1e-12
    assert star_compat_cayley(G, Xi) < 1e-12
    assert torsion_check_cayley(G, Xi) < 1e-12
    assert qlc_residual(to_graph_connection(G, Xi, g)).ok(1e-12)


def test_vector_fields_match_generic(rng):
    N = 7
    G = GroupSpec.cyclic(N)
    Xi, g = lattice_xi(G, rng.uniform(0.5, 2, N))
    conn = to_graph_connection(G, Xi, g)
    mu = rng.uniform(0.5, 2, N)
    X = rand_c(rng, (2, N))
    Xa = to_arrows(G, X)
    assert np.abs(div_cayley(G, Xi, g, X) - ge.div_geometric(conn, Xa)).max() < 1e-13
    assert np.abs(div_int_cayley(G, mu, X) - ge.div_int(conn.graph, Xa, mu)).max() < 1e-13
    nv = ge.nabla_X_vf(conn, Xa)
    T = nabla_X_cayley(G, Xi, X)
    fi, t = conn.graph.fork_index, G.table
    for a, ga in enumerate(G.generators):
        for b, gb in enumerate(G.generators):
            for x in range(N):
                assert abs(nv[fi[(x, t[x, ga], t[x, gb])]] - T[a, b, x]) < 1e-13
    Xr = 0.5 * (X + star_vf_cayley(G, mu, X))
    Xra = to_arrows(G, Xr)
    assert reality_defect_cayley(G, mu, Xr) < 1e-14
    assert ge.reality_defect(conn.graph, Xra, mu) < 1e-14
    B = cayley_free_rhs(G, Xi, mu, Xr)
    assert np.abs(to_arrows(G, B) - ge.free_rhs(conn, mu, Xra)).max() < 1e-13
    vg = ge.free_rhs(conn, mu, Xra) + ge.driving_force(conn, mu, Xra)
    assert np.abs(to_arrows(G, velocity_rhs_cayley(G, Xi, g, mu, Xr)) - 2 * vg).max() < 1e-13
    F = cayley_force(G, Xi, mu, Xr)
    assert np.abs(to_arrows(G, velocity_rhs_cayley(G, Xi, g, mu, Xr, F=F)) - 2 * vg).max() < 1e-13
    psi = rand_c(rng, N)
    assert np.abs(amplitude_rhs_cayley(G, mu, Xr, psi) - ge.amplitude_rhs(conn.graph, Xra, mu, psi)).max() < 1e-13


def test_nonabelian_velocity_with_alpha(rng):
    G = s3_four()
    Xi = random_xi(G, rng)
    g = rng.uniform(0.5, 2, (G.k, 6))
    conn = to_graph_connection(G, Xi, g)
    mu = np.ones(6)
    X = rand_c(rng, (G.k, 6))
    Xr = 0.5 * (X + star_vf_cayley(G, mu, X))
    Xa = to_arrows(G, Xr)
    vg = ge.free_rhs(conn, mu, Xa) + ge.driving_force(conn, mu, Xa)
    assert np.abs(to_arrows(G, velocity_rhs_cayley(G, Xi, g, mu, Xr)) - 2 * vg).max() < 1e-12
    with pytest.raises(UnsupportedTwist):
        velocity_rhs_cayley(G, Xi, g, rng.uniform(1, 2, 6), Xr)
    # a class function on S_3 is allowed
    cls = np.array([1.0 if x == G.identity else 1.5 for x in range(6)])
    cayley_free_rhs(G, Xi, cls, Xr)


def test_reality_loss_raised(rng):
    G = GroupSpec.cyclic(5)
    Xi, g = lattice_xi(G, rng.uniform(0.5, 2, 5))
    with pytest.raises(ge.RealityLoss):
        velocity_rhs_cayley(G, Xi, g, np.ones(5), rand_c(rng, (2, 5)))


def test_divergence_compat_constant():
    G = GroupSpec.cyclic(6)
    Xi, g = lattice_xi(G, np.ones(6))
    assert divergence_compat_cayley(G, Xi, g, np.ones(6)) < 1e-14
