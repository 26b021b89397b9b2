"""Quantum geodesic flows on graphs.

A vector field is a complex array over the arrows; the entry on arrow x->y is
the coefficient X^{y<-x} of the basis field chi_{y<-x} dual to w_{x->y}.
Elements of (vector fields) (x)_A (1-forms) live on ``graph.forks``: the
triple (z, y, s) labels chi_{y<-z} (x) w_{z->s}.
"""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .connection import Connection
from .graph import TOL, DirectedGraph


class Blowup(RuntimeError):
    def __init__(self, s_last, s_cross, trajectory):
        super().__init__(f"velocity field exceeded the cap after s = {s_last:.6g} "
                         f"(crossing near s = {s_cross:.6g})")
        self.s_last = s_last
        self.s_cross = s_cross
        self.trajectory = trajectory


class RealityLoss(RuntimeError):
    def __init__(self, s, defect, trajectory=None):
        super().__init__(f"velocity field lost reality at s = {s:.6g} (defect {defect:.3g})")
        self.s = s
        self.defect = defect
        self.trajectory = trajectory


class NegativeMeasureWarning(UserWarning):
    pass


@dataclass(frozen=True)
class Measure:
    mu: np.ndarray

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=float).copy()
        if np.any(mu == 0) or not np.all(np.isfinite(mu)):
            raise ValueError("measure entries must be finite and nonzero")
        if np.any(mu < 0):
            warnings.warn("measure has negative entries; probability mass is a signed sum",
                          NegativeMeasureWarning, stacklevel=3)
        mu.flags.writeable = False
        object.__setattr__(self, "mu", mu)

    @property
    def positive(self) -> bool:
        return bool(np.all(self.mu > 0))

    @classmethod
    def uniform(cls, n: int):
        return cls(np.ones(n))


def _mu(mu) -> np.ndarray:
    return mu.mu if isinstance(mu, Measure) else np.asarray(mu, dtype=float)


def _scatter(idx, vals, size) -> np.ndarray:
    vals = np.asarray(vals, dtype=complex)
    return np.bincount(idx, vals.real, size) + 1j * np.bincount(idx, vals.imag, size)


# -- vector field algebra ----------------------------------------------------

def div_int(g: DirectedGraph, X, mu) -> np.ndarray:
    """Divergence with respect to the measure: sum out - sum in weighted by mu ratios."""
    mu = _mu(mu)
    X = np.asarray(X, dtype=complex)
    return (_scatter(g.src, X, g.n)
            - _scatter(g.dst, mu[g.src] / mu[g.dst] * X, g.n))


def transport(g: DirectedGraph, V, mu) -> np.ndarray:
    """T(V)^{x<-y} = -(mu_x/mu_y) conj(V^{y<-x}); X is real iff T(X) = X."""
    mu = _mu(mu)
    V = np.asarray(V, dtype=complex)
    return -(mu[g.dst] / mu[g.src]) * np.conj(V[g.reverse])


def reality_defect(g: DirectedGraph, X, mu) -> float:
    mu = _mu(mu)
    X = np.asarray(X, dtype=complex)
    d = np.conj(X) + mu[g.dst] / mu[g.src] * X[g.reverse]
    return float(np.max(np.abs(d), initial=0.0))


def real_part(g: DirectedGraph, X, mu) -> np.ndarray:
    """Projection (X + T(X))/2 onto fields that are real for the measure."""
    return 0.5 * (np.asarray(X, dtype=complex) + transport(g, X, mu))


def _fork_arrays(conn: Connection):
    cached = getattr(conn, "_fork_cache", None)
    if cached is not None:
        return cached
    g = conn.graph
    fi, idx = g.fork_index, g.index
    src = np.array([idx[(z, y)] for z, y, _ in g.forks], dtype=int)
    sq = []
    for (x, y, z, u), v in conn.coeffs.L.items():
        if v:
            sq.append((fi[(x, y, z)], idx[(z, u)], conn.metric.lam_of(x, y) * v))
    tri = []
    for (x, y, z), v in conn.coeffs.N.items():
        if v:
            tri.append((fi[(x, y, z)], idx[(z, y)], conn.metric.lam_of(x, y) * v))

    def unpack(rows):
        if not rows:
            return np.zeros(0, int), np.zeros(0, int), np.zeros(0, complex)
        a, b, c = zip(*rows)
        return np.array(a), np.array(b), np.array(c, dtype=complex)

    cached = (src, unpack(sq), unpack(tri))
    conn._fork_cache = cached
    return cached


def nabla_X_vf(conn: Connection, X) -> np.ndarray:
    """Dual connection on vector fields, coefficients over graph.forks."""
    X = np.asarray(X, dtype=complex)
    g = conn.graph
    src, (sq_f, sq_a, sq_c), (tr_f, tr_a, tr_c) = _fork_arrays(conn)
    out = -X[src]
    out += _scatter(sq_f, sq_c * X[sq_a], len(g.forks))
    out -= _scatter(tr_f, tr_c * X[tr_a], len(g.forks))
    return out


def contract(g: DirectedGraph, T, X) -> np.ndarray:
    """(id (x) X) on fork coefficients: chi_{y<-z} (x) w_{z->s} -> chi_{y<-z} X^{s<-z}."""
    X = np.asarray(X, dtype=complex)
    idx = g.index
    out_arrow = np.array([idx[(z, y)] for z, y, _ in g.forks], dtype=int)
    form_arrow = np.array([idx[(z, s)] for z, _, s in g.forks], dtype=int)
    return _scatter(out_arrow, np.asarray(T) * X[form_arrow], g.n_arrows)


def convective(conn: Connection, X) -> np.ndarray:
    """(id (x) X) nabla X, evaluated directly from the coefficient patterns."""
    X = np.asarray(X, dtype=complex)
    g = conn.graph
    out = -X * _scatter(g.src, X, g.n)[g.src]
    a_out, a1, a2, c = conn.square_arrays
    out += _scatter(a_out, c * X[a1] * X[a2], g.n_arrows)
    a_out, a1, a2, c = conn.triangle_arrays
    out -= _scatter(a_out, c * X[a1] * X[a2], g.n_arrows)
    return out


def div_geometric(conn: Connection, X) -> np.ndarray:
    """Geometric divergence, linear extension of its values on basis fields."""
    g, m, L = conn.graph, conn.metric, conn.coeffs.L
    X = np.asarray(X, dtype=complex)
    out = np.zeros(g.n, dtype=complex)
    for a, (q, p) in enumerate(g.arrows):       # chi_{p<-q}
        if X[a] == 0:
            continue
        tot = sum(L.get((p, q, z, p), 0) * m.lam_of(p, z) for z in g.successors[p])
        out[q] += X[a]
        out[p] -= X[a] * m.lam_of(p, q) / m.lam_of(q, p) * tot
    return out


def divergence_compat_residual(conn: Connection, mu) -> float:
    """max |sum_z L_{p->q,z->p} lam_{p->z} - (mu_q/mu_p)(lam_{q->p}/lam_{p->q})|."""
    g, m, L = conn.graph, conn.metric, conn.coeffs.L
    mu = _mu(mu)
    worst = 0.0
    for p, q in g.arrows:
        tot = sum(L.get((p, q, z, p), 0) * m.lam_of(p, z) for z in g.successors[p])
        target = mu[q] / mu[p] * m.lam_of(q, p) / m.lam_of(p, q)
        worst = max(worst, abs(tot - target))
    return worst


def star_vf(conn: Connection, mu, X, tol: float = 1e-10) -> np.ndarray:
    """Canonical *-operation on vector fields (needs divergence compatibility)."""
    d = divergence_compat_residual(conn, mu)
    if d > tol:
        raise ValueError(f"measure is not divergence compatible (defect {d:.3g})")
    g, m, L = conn.graph, conn.metric, conn.coeffs.L
    X = np.asarray(X, dtype=complex)
    out = np.zeros_like(X)
    for a, (q, p) in enumerate(g.arrows):       # chi_{p<-q} -> multiple of chi_{q<-p}
        tot = sum(L.get((z, p, p, q), 0) * m.lam_of(p, z) for z in g.successors[p])
        out[g.index[(p, q)]] -= np.conj(X[a]) * m.lam_of(p, q) / m.lam_of(q, p) * tot
    return out


def free_rhs(conn: Connection, mu, X) -> np.ndarray:
    """[X, kappa] + (id (x) X) nabla X with kappa = div/2; this is -dX/ds without force."""
    g = conn.graph
    X = np.asarray(X, dtype=complex)
    kappa = 0.5 * div_int(g, X, mu)
    return X * (kappa[g.src] - kappa[g.dst]) + convective(conn, X)


def driving_force(conn: Connection, mu, X, tol: float = 1e-8) -> np.ndarray:
    """Force that is imaginary for the measure and keeps real fields real."""
    g = conn.graph
    d = reality_defect(g, X, mu)
    if d > tol:
        raise RealityLoss(0.0, d)
    B = free_rhs(conn, mu, X)
    return -0.5 * (B - transport(g, B, mu))


def velocity_rhs(conn: Connection, mu, X, F=None) -> np.ndarray:
    """-dX/ds for a given force (zero when F is None)."""
    B = free_rhs(conn, mu, X)
    return B if F is None else B + np.asarray(F, dtype=complex)


def amplitude_rhs(g: DirectedGraph, X, mu, psi) -> np.ndarray:
    X = np.asarray(X, dtype=complex)
    psi = np.asarray(psi, dtype=complex)
    hop = _scatter(g.src, (psi[g.dst] - psi[g.src]) * X, g.n)
    return -0.5 * psi * div_int(g, X, mu) - hop


def prob_mass(psi, mu) -> float:
    return float(np.sum(_mu(mu) * np.abs(psi) ** 2))


# -- integration -------------------------------------------------------------

@dataclass
class GeodesicState:
    s: float
    X: np.ndarray
    psi: np.ndarray
    kappa: np.ndarray | None = None
    prob_mass: float = math.nan
    reality_defect: float = math.nan


@dataclass
class Trajectory:
    graph: DirectedGraph
    s: list = field(default_factory=list)
    X: list = field(default_factory=list)
    psi: list = field(default_factory=list)
    prob_mass: list = field(default_factory=list)
    reality_defect: list = field(default_factory=list)
    complexified: bool = False

    def append(self, st: GeodesicState):
        self.s.append(st.s)
        self.X.append(st.X.copy())
        self.psi.append(st.psi.copy())
        self.prob_mass.append(st.prob_mass)
        self.reality_defect.append(st.reality_defect)

    def arrays(self):
        return (np.array(self.s), np.array(self.X), np.array(self.psi),
                np.array(self.prob_mass), np.array(self.reality_defect))

    def state(self, k: int = -1) -> GeodesicState:
        return GeodesicState(self.s[k], self.X[k], self.psi[k], None,
                             self.prob_mass[k], self.reality_defect[k])

    def header(self):
        cols = ["s"]
        for x, y in self.graph.arrows:
            cols += [f"X[{x}->{y}].re", f"X[{x}->{y}].im"]
        for v in range(self.graph.n):
            cols += [f"psi[{v}].re", f"psi[{v}].im"]
        return cols + ["prob_mass", "reality_defect"]

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            write_rows(fh, self.header(), self.rows())

    def rows(self):
        for s, X, psi, pm, rd in zip(self.s, self.X, self.psi, self.prob_mass, self.reality_defect):
            row = [s]
            for z in X:
                row += [z.real, z.imag]
            for z in psi:
                row += [z.real, z.imag]
            yield row + [pm, rd]


def write_rows(fh, header, rows):
    w = csv.writer(fh)
    w.writerow(header)
    for row in rows:
        w.writerow([format(float(v), ".17g") for v in row])


def rk4_increment(f, y, h):
    k1 = f(y)
    k2 = f(y + 0.5 * h * k1)
    k3 = f(y + 0.5 * h * k2)
    k4 = f(y + h * k3)
    return (h / 6) * (k1 + 2 * k2 + 2 * k3 + k4)


def rk4_step(f, y, h):
    return y + rk4_increment(f, y, h)


class CompensatedRK4:
    """Classical RK4 whose state sum carries a Kahan compensation term."""

    def __init__(self, f, y0):
        self.f = f
        y0 = np.asarray(y0)
        self.y = np.array(y0, dtype=np.result_type(y0.dtype, float))
        self.c = np.zeros_like(self.y)

    def trial(self, h):
        inc = rk4_increment(self.f, self.y, h) - self.c
        t = self.y + inc
        return t, (t - self.y) - inc

    def accept(self, t, c):
        self.y, self.c = t, c


class GeodesicFlow:
    """Right-hand side of the joint (X, psi) system on a packed state vector."""

    def __init__(self, conn: Connection, mu, force_mode: str = "generated"):
        if force_mode not in ("generated", "zero"):
            raise ValueError("force_mode must be 'generated' or 'zero'")
        self.conn = conn
        self.graph = g = conn.graph
        self.mu = _mu(mu)
        self.force_mode = force_mode
        self.A = g.n_arrows
        self._src, self._dst, self._rev = g.src, g.dst, g.reverse
        self._ratio_in = self.mu[g.src] / self.mu[g.dst]
        self._ratio_T = self.mu[g.dst] / self.mu[g.src]

    def _div(self, X):
        n = self.graph.n
        return _scatter(self._src, X, n) - _scatter(self._dst, self._ratio_in * X, n)

    def rates(self, X, psi):
        src, dst = self._src, self._dst
        div = self._div(X)
        kappa = 0.5 * div
        B = X * (kappa[src] - kappa[dst]) + convective(self.conn, X)
        if self.force_mode == "generated":
            B = 0.5 * (B - self._ratio_T * np.conj(B[self._rev]))
        dpsi = -0.5 * psi * div - _scatter(src, (psi[dst] - psi[src]) * X, self.graph.n)
        return -B, dpsi

    def __call__(self, y):
        dX, dpsi = self.rates(y[: self.A], y[self.A:])
        return np.concatenate([dX, dpsi])

    def state(self, s, y) -> GeodesicState:
        X, psi = y[: self.A], y[self.A:]
        return GeodesicState(s, X, psi, 0.5 * self._div(X), prob_mass(psi, self.mu),
                             reality_defect(self.graph, X, self.mu))


def evolve(conn: Connection, mu, state0, ds: float, steps: int, force_mode: str = "generated",
           cap: float = 1e6, tol: float = 1e-8, allow_complex: bool = False,
           record_every: int = 1) -> Trajectory:
    """Fixed-step RK4 integration of the geodesic velocity and amplitude flows."""
    if ds <= 0 or steps < 1:
        raise ValueError("need ds > 0 and steps >= 1")
    flow = GeodesicFlow(conn, mu, force_mode)
    g = conn.graph
    if isinstance(state0, GeodesicState):
        s0, X0, psi0 = state0.s, state0.X, state0.psi
    else:
        X0, psi0 = state0
        s0 = 0.0
    X0 = np.asarray(X0, dtype=complex)
    psi0 = np.asarray(psi0, dtype=complex)
    d0 = reality_defect(g, X0, flow.mu)
    if force_mode == "generated" and d0 > tol:
        raise RealityLoss(s0, d0)
    stepper = CompensatedRK4(flow, np.concatenate([X0, psi0]))
    traj = Trajectory(g)
    traj.append(flow.state(s0, stepper.y))
    for k in range(1, steps + 1):
        y_new, c_new = stepper.trial(ds)
        X = y_new[: flow.A]
        if not np.all(np.isfinite(y_new)) or np.max(np.abs(X)) > cap:
            s_last = s0 + (k - 1) * ds
            raise Blowup(s_last, s_last + _crossing(flow, stepper.y, ds, cap), traj)
        stepper.accept(y_new, c_new)
        y = y_new
        s = s0 + k * ds
        if k % record_every == 0 or k == steps:
            st = flow.state(s, y)
            traj.append(st)
            if force_mode == "zero" and st.reality_defect > tol:
                if not allow_complex:
                    raise RealityLoss(s, st.reality_defect, traj)
                traj.complexified = True
    return traj


def _crossing(flow, y, ds, cap, iters: int = 60) -> float:
    """Bisect the step length at which a single RK4 step first exceeds the cap."""
    lo, hi = 0.0, ds
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        z = rk4_step(flow, y, mid)[: flow.A]
        if np.all(np.isfinite(z)) and np.max(np.abs(z)) <= cap:
            lo = mid
        else:
            hi = mid
    return hi
