import csv
import io
import math
import warnings

import numpy as np
import pytest

from conftest import GRAPHS, random_torsion_free
from qgeo.cayley import to_graph_connection
from qgeo.geodesic import (Blowup, CompensatedRK4, Measure, NegativeMeasureWarning, RealityLoss,
                           amplitude_rhs, contract, convective, div_int, divergence_compat_residual,
                           driving_force, evolve, free_rhs, nabla_X_vf, prob_mass, real_part,
                           reality_defect, rk4_step, star_vf, transport, velocity_rhs, write_rows)
from qgeo.graph import differential
from qgeo.lattice import LatticeMetric, lattice_group, qlc_z
from qgeo.star import solve_star


def rand_c(rng, n):
    return rng.normal(size=n) + 1j * rng.normal(size=n)


@pytest.mark.parametrize("name", sorted(GRAPHS))
def test_div_int_adjoint(name, rng):
    g = GRAPHS[name]
    mu = rng.uniform(0.5, 2, g.n)
    X, f = rand_c(rng, g.n_arrows), rand_c(rng, g.n)
    # X(df) at x sums X^{y<-x}(f_y - f_x) over arrows out of x
    Xdf = np.bincount(g.src, weights=(X * differential(g, f)).real, minlength=g.n) \
        + 1j * np.bincount(g.src, weights=(X * differential(g, f)).imag, minlength=g.n)
    assert abs(np.sum(mu * Xdf) + np.sum(mu * f * div_int(g, X, mu))) < 1e-12


@pytest.mark.parametrize("name", sorted(GRAPHS))
def test_convective_two_routes(name, rng):
    conn = random_torsion_free(rng, GRAPHS[name])
    X = rand_c(rng, conn.graph.n_arrows)
    direct = convective(conn, X)
    via_forks = contract(conn.graph, nabla_X_vf(conn, X), X)
    assert np.abs(direct - via_forks).max() < 1e-12


@pytest.mark.parametrize("name", sorted(GRAPHS))
def test_reality_projection(name, rng):
    g = GRAPHS[name]
    mu = rng.uniform(0.5, 2, g.n)
    V = rand_c(rng, g.n_arrows)
    assert np.abs(transport(g, transport(g, V, mu), mu) - V).max() < 1e-14
    X = real_part(g, V, mu)
    assert reality_defect(g, X, mu) < 1e-14
    assert reality_defect(g, V, mu) > 1e-3


@pytest.mark.parametrize("name", sorted(GRAPHS))
def test_generated_force_keeps_reality(name, rng):
    conn = random_torsion_free(rng, GRAPHS[name])
    g = conn.graph
    mu = rng.uniform(0.5, 2, g.n)
    X = real_part(g, rand_c(rng, g.n_arrows), mu)
    F = driving_force(conn, mu, X)
    V = velocity_rhs(conn, mu, X, F)
    assert reality_defect(g, V, mu) < 1e-12
    # the force itself is imaginary
    assert np.abs(transport(g, F, mu) + F).max() < 1e-12
    assert np.abs(velocity_rhs(conn, mu, X) - free_rhs(conn, mu, X)).max() == 0
    with pytest.raises(RealityLoss):
        driving_force(conn, mu, X + 0.1)


@pytest.mark.parametrize("name", sorted(GRAPHS))
def test_amplitude_conserves_mass(name, rng):
    g = GRAPHS[name]
    mu = rng.uniform(0.5, 2, g.n)
    X = real_part(g, rand_c(rng, g.n_arrows), mu)
    psi = rand_c(rng, g.n)
    dpsi = amplitude_rhs(g, X, mu, psi)
    assert abs(np.sum(mu * 2 * np.real(np.conj(psi) * dpsi))) < 1e-12


def test_star_vf_on_constant_cycle(rng):
    N = 6
    m = LatticeMetric(np.ones(N))
    G = lattice_group(N)
    conn = to_graph_connection(G, qlc_z(m), m.g_pm())
    mu = np.ones(N)
    assert divergence_compat_residual(conn, mu) < 1e-14
    X = rand_c(rng, conn.graph.n_arrows)
    assert np.abs(star_vf(conn, mu, X) - transport(conn.graph, X, mu)).max() < 1e-14
    with pytest.raises(ValueError, match="divergence compatible"):
        star_vf(conn, rng.uniform(0.5, 2, N), X)


def test_negative_measure_warns():
    with pytest.warns(NegativeMeasureWarning):
        mu = Measure(np.array([1.0, -0.5]))
    assert not mu.positive
    assert prob_mass(np.array([1.0, 1.0]), mu) == pytest.approx(0.5)
    with pytest.raises(ValueError):
        Measure(np.array([1.0, 0.0]))


def test_compensated_rk4_order():
    # y' = i y, exact exp(i s)
    f = lambda y: 1j * y
    errs = []
    for h in (0.1, 0.05, 0.025):
        st = CompensatedRK4(f, np.array([1.0 + 0j]))
        for _ in range(round(2 / h)):
            st.accept(*st.trial(h))
        errs.append(abs(st.y[0] - np.exp(2j)))
    for a, b in zip(errs, errs[1:]):
        assert 16 / 2 < a / b < 16 * 2
    y = np.array([1.0 + 0j])
    assert abs(rk4_step(f, y, 0.1)[0] - (1 + 0.1j - 0.005 - 0.1 ** 3 / 6 * 1j + 0.1 ** 4 / 24)) < 1e-15


def star4():
    conn = solve_star(4)[0].connection
    g = conn.graph
    X = np.zeros(g.n_arrows, dtype=complex)
    X[g.index[(1, 0)]] = 1
    X[g.index[(0, 1)]] = -1
    return conn, X, np.eye(5)[1].astype(complex)


def test_evolve_records_and_csv(tmp_path):
    conn, X, psi = star4()
    tr = evolve(conn, np.ones(5), (X, psi), 0.01, 20, record_every=5)
    s, Xs, _, mass, rd = tr.arrays()
    assert np.allclose(s, [0, 0.05, 0.1, 0.15, 0.2])
    assert np.abs(mass - 1).max() < 10 * 20 * 0.01 ** 5 and rd.max() < 1e-14
    path = tmp_path / "t.csv"
    tr.write_csv(path)
    rows = list(csv.reader(open(path)))
    assert rows[0] == tr.header() and len(rows) == 6
    assert float(rows[-1][1]) == Xs[-1, 0].real     # 17 significant digits round-trip exactly


def test_evolve_errors():
    conn, X, psi = star4()
    with pytest.raises(ValueError):
        evolve(conn, np.ones(5), (X, psi), 0.01, 0)
    with pytest.raises(RealityLoss):
        evolve(conn, np.ones(5), (X + 0.5, psi), 0.01, 5)
    with pytest.raises(ValueError):
        evolve(conn, np.ones(5), (X, psi), 0.01, 5, force_mode="other")


def test_zero_force_mode_loses_reality():
    rng = np.random.default_rng(4)
    conn = random_torsion_free(rng, GRAPHS["triangle"])
    g = conn.graph
    X = real_part(g, rand_c(rng, g.n_arrows), np.ones(3))
    with pytest.raises(RealityLoss) as exc:
        evolve(conn, np.ones(3), (X, np.ones(3)), 0.01, 100, force_mode="zero")
    assert exc.value.trajectory is not None
    tr = evolve(conn, np.ones(3), (X, np.ones(3)), 0.01, 100, force_mode="zero", allow_complex=True)
    assert tr.complexified


def test_blowup_keeps_partial_trajectory():
    conn, X, psi = star4()
    with pytest.raises(Blowup) as exc:
        evolve(conn, np.ones(5), (X, psi), 0.01, 1000, record_every=10)
    b = exc.value
    assert b.s_last <= b.s_cross <= b.s_last + 0.01
    assert len(b.trajectory.s) > 10
    assert abs(b.s_cross - 8 * math.pi / (3 * math.sqrt(3))) < 0.05


def test_write_rows_format():
    buf = io.StringIO()
    write_rows(buf, ["a", "b"], [[0.1, 1 / 3]])
    assert buf.getvalue().splitlines()[1] == "0.10000000000000001,0.33333333333333331"
