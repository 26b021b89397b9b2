"""Metrics and hermitian-compatible bimodule connections on bidirected graphs.

A connection is parametrised by square coefficients ``L[(x, y, z, u)]`` for
pairs of paths x->y->u and x->z->u, and triangle coefficients
``N[(x, y, z)]`` for x->z->y with x->y.  With lam_{x->y} = 1/g_{y->x}:

    sigma(w_{x->y} (x) w_{y->u}) = sum_z lam_{x->y} L_{x->y,z->u} w_{x->z} (x) w_{z->u}
    alpha(w_{x->y})              = sum_z lam_{x->y} N_{x->y,z->y} w_{x->z} (x) w_{z->y}
    nabla w = theta (x) w - sigma(w (x) theta) + alpha(w)
"""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from typing import NamedTuple

import numpy as np
import scipy.sparse as sp

from .graph import TOL, DirectedGraph, GraphError, dagger, differential, tensor, wedge_project


class HermiticityError(ValueError):
    def __init__(self, key, defect):
        super().__init__(f"coefficient {format_key(key)} breaks hermiticity (defect {defect:.3g})")
        self.key = key
        self.defect = defect


class SquareConditionError(ValueError):
    def __init__(self, squares):
        super().__init__(f"metric fails the square condition on {len(squares)} square(s), "
                         f"first {squares[0]}")
        self.squares = squares


def format_key(key) -> str:
    if len(key) == 4:
        x, y, z, u = key
        return f"{x}->{y},{z}->{u}"
    x, y, z = key
    return f"{x}->{y},{z}->{y}"


def parse_key(text: str):
    """Inverse of format_key; a second arrow ending at y marks a triangle."""
    first, second = text.split(",")
    x, y = map(int, first.split("->"))
    z, u = map(int, second.split("->"))
    return (x, y, z) if u == y else (x, y, z, u)


@dataclass(frozen=True)
class GraphMetric:
    graph: DirectedGraph
    g: np.ndarray

    def __post_init__(self):
        g = np.asarray(self.g, dtype=float).copy()
        if g.shape != (self.graph.n_arrows,):
            raise GraphError("metric needs one value per arrow")
        if not self.graph.bidirected:
            raise GraphError("metrics need a bidirected graph")
        if np.any(g == 0) or not np.all(np.isfinite(g)):
            raise GraphError("metric coefficients must be finite and nonzero")
        g.flags.writeable = False
        object.__setattr__(self, "g", g)

    @cached_property
    def lam(self) -> np.ndarray:
        return 1.0 / self.g[self.graph.reverse]

    @property
    def edge_symmetric(self) -> bool:
        return bool(np.allclose(self.g, self.g[self.graph.reverse], rtol=0, atol=TOL))

    def __getitem__(self, arrow) -> float:
        return float(self.g[self.graph.index[arrow]])

    def lam_of(self, x, y) -> float:
        return float(self.lam[self.graph.index[(x, y)]])

    @classmethod
    def from_dict(cls, graph, values: dict[str, float]):
        g = np.full(graph.n_arrows, np.nan)
        for key, v in values.items():
            x, y = map(int, key.split("->"))
            if (x, y) not in graph.index:
                raise GraphError(f"metric entry {key} is not an arrow")
            g[graph.index[(x, y)]] = float(v)
        if np.isnan(g).any():
            missing = [f"{x}->{y}" for (x, y), v in zip(graph.arrows, g) if np.isnan(v)]
            raise GraphError(f"metric missing arrows {missing}")
        return cls(graph, g)

    def to_json(self):
        return {"g": {f"{x}->{y}": float(v) for (x, y), v in zip(self.graph.arrows, self.g)}}


@dataclass
class ConnectionCoeffs:
    L: dict = field(default_factory=dict)
    N: dict = field(default_factory=dict)
    Q: np.ndarray | None = None
    b: np.ndarray | None = None

    def conj(self) -> "ConnectionCoeffs":
        return ConnectionCoeffs({k: np.conj(v) for k, v in self.L.items()},
                                {k: np.conj(v) for k, v in self.N.items()},
                                None if self.Q is None else np.conj(self.Q),
                                self.b)

    def to_json(self):
        out = {"L": {format_key(k): [float(np.real(v)), float(np.imag(v))] for k, v in sorted(self.L.items())},
               "N": {format_key(k): [float(np.real(v)), float(np.imag(v))] for k, v in sorted(self.N.items())}}
        if self.Q is not None:
            out["Q"] = [[float(q.real), float(q.imag)] for q in np.asarray(self.Q, dtype=complex)]
        if self.b is not None:
            out["b"] = [float(v) for v in self.b]
        return out

    @classmethod
    def from_json(cls, data):
        L, N = {}, {}
        for text, (re, im) in data.get("L", {}).items():
            L[parse_key(text)] = complex(re, im)
        for text, (re, im) in data.get("N", {}).items():
            N[parse_key(text)] = complex(re, im)
        Q = data.get("Q")
        if Q is not None:
            Q = np.array([complex(a, b) for a, b in Q])
        b = data.get("b")
        if b is not None:
            b = np.array(b, dtype=float)
        return cls(L, N, Q, b)


def enumerate_configs(g: DirectedGraph):
    """Square keys (x, y, z, u) and triangle keys (x, y, z) of a graph.

    A square is a pair of length-2 paths x->y->u and x->z->u (z == y and
    u == x allowed).  A triangle is x->z->y together with the arrow x->y.
    """
    squares = []
    for (x, u), idx in g.blocks.items():
        mids = [g.paths2[k][1] for k in idx]
        squares.extend((x, y, z, u) for y in mids for z in mids)
    squares.sort()
    triangles = sorted((x, y, z) for x, z, y in g.paths2 if y != x and g.has(x, y))
    return squares, triangles


def _partner_square(key):
    x, y, z, u = key
    return (z, u, x, y)


def _partner_triangle(key):
    x, y, z = key
    return (z, y, x)


def hermiticity_defects(m: GraphMetric, c: ConnectionCoeffs):
    """Yield (key, |KG - (KG)^dagger| entry) for every configuration."""
    lam, idx = m.lam, m.graph.index
    squares, triangles = enumerate_configs(m.graph)
    for key in squares:
        x, y, z, u = key
        w = lam[idx[(x, y)]] * lam[idx[(z, u)]]
        d = abs(c.L.get(key, 0) - np.conj(c.L.get(_partner_square(key), 0))) * abs(w)
        yield key, d
    for key in triangles:
        x, y, z = key
        w = lam[idx[(x, y)]] * lam[idx[(z, y)]]
        d = abs(c.N.get(key, 0) - np.conj(c.N.get(_partner_triangle(key), 0))) * abs(w)
        yield key, d


def hermitian_residual(m: GraphMetric, c: ConnectionCoeffs) -> float:
    """max |KG - (KG)^dagger| with K = alpha - sigma(. (x) theta), G = diag(lam)."""
    K = k_matrix(m, c)
    KG = K * m.lam[None, :]
    return float(np.max(np.abs(KG - KG.conj().T))) if KG.size else 0.0


def k_matrix(m: GraphMetric, c: ConnectionCoeffs) -> np.ndarray:
    """Arrow-by-arrow matrix of K: entry (x->y, z->u) is the coefficient of
    w_{x->z} (x) w_{z->u} in K(w_{x->y})."""
    g, lam = m.graph, m.lam
    K = np.zeros((g.n_arrows, g.n_arrows), dtype=complex)
    for (x, y, z, u), v in c.L.items():
        a = g.index[(x, y)]
        K[a, g.index[(z, u)]] = -lam[a] * v
    for (x, y, z), v in c.N.items():
        a = g.index[(x, y)]
        K[a, g.index[(z, y)]] = lam[a] * v
    return K


def coeffs_from_k(m: GraphMetric, K) -> ConnectionCoeffs:
    g, lam = m.graph, m.lam
    squares, triangles = enumerate_configs(g)
    L = {}
    for x, y, z, u in squares:
        a = g.index[(x, y)]
        L[(x, y, z, u)] = -K[a, g.index[(z, u)]] / lam[a]
    N = {}
    for x, y, z in triangles:
        a = g.index[(x, y)]
        N[(x, y, z)] = K[a, g.index[(z, y)]] / lam[a]
    return ConnectionCoeffs(L, N)


def square_metric_condition(m: GraphMetric, tol: float = TOL):
    """Nondegenerate squares where g_{y->x}+g_{u->y} != g_{u->z}+g_{y->u}."""
    bad = []
    squares, _ = enumerate_configs(m.graph)
    for x, y, z, u in squares:
        if z == y or u == x:
            continue
        lhs = m[(y, x)] + m[(u, y)]
        rhs = m[(u, z)] + m[(y, u)]
        if abs(lhs - rhs) > tol:
            bad.append((x, y, z, u))
    return bad


def _as_arrow_array(graph, values) -> np.ndarray:
    if isinstance(values, dict):
        out = np.zeros(graph.n_arrows, dtype=complex)
        for arrow, v in values.items():
            out[graph.index[tuple(arrow)]] = v
        return out
    return np.asarray(values, dtype=complex)


def torsion_free_from_Q(m: GraphMetric, Q, b=None, tol: float = TOL) -> ConnectionCoeffs:
    """Torsion-free hermitian-compatible coefficients from a per-arrow Q.

    Built through M_{xyu} with lam_{x->y} L_{x->y,z->u} + delta_{y,z} = lam_{x->y} M_{xyu}:
    M_{xyx} = g_{y->x} + Q_{x->y}, M_{xyu} = Q_{u->y} + g_{u->y} + g_{y->x} (u != x).
    """
    graph = m.graph
    Q = _as_arrow_array(graph, Q)
    rev = graph.reverse
    defect = np.max(np.abs(np.conj(Q) - Q[rev])) if Q.size else 0.0
    if defect > tol:
        raise ValueError(f"Q must satisfy Q_(x->y)^* = Q_(y->x) (defect {defect:.3g})")
    bad = square_metric_condition(m, tol)
    if bad:
        raise SquareConditionError(bad)
    b = np.zeros(graph.n) if b is None else np.asarray(b, dtype=float)
    q = {a: Q[k] for k, a in enumerate(graph.arrows)}

    def M(x, y, u):
        if u == x:
            return m[(y, x)] + q[(x, y)]
        return q[(u, y)] + m[(u, y)] + m[(y, x)]

    squares, triangles = enumerate_configs(graph)
    L = {}
    worst = 0.0
    for x, y, z, u in squares:
        v = M(x, y, u) - (m[(y, x)] if y == z else 0.0)
        # condensed closed form, kept as a consistency check
        alt = q[(u, y)] + (u != x) * m[(u, y)] + (y != z) * m[(y, x)]
        worst = max(worst, abs(v - alt))
        L[(x, y, z, u)] = complex(v)
    if worst > tol:
        warnings.warn(f"closed-form and M-based square coefficients differ by {worst:.3g}")
    N = {(x, y, z): complex(b[y]) for x, y, z in triangles}
    return ConnectionCoeffs(L, N, Q, b)


class Connection:
    """A bimodule connection realised as sparse matrices over the path bases."""

    def __init__(self, metric: GraphMetric, coeffs: ConnectionCoeffs):
        self.metric = metric
        self.coeffs = coeffs
        g = self.graph = metric.graph
        lam, idx, pidx = metric.lam, g.index, g.path_index
        P, A = len(g.paths2), g.n_arrows

        rows, cols, vals = [], [], []
        sq = []
        for (x, y, z, u), v in coeffs.L.items():
            if v == 0:
                continue
            c = lam[idx[(x, y)]] * v
            rows.append(pidx[(x, z, u)])
            cols.append(pidx[(x, y, u)])
            vals.append(c)
            sq.append((idx[(x, y)], idx[(z, u)], idx[(x, z)], c))
        self.sigma = sp.csr_matrix((np.array(vals, dtype=complex), (rows, cols)), shape=(P, P))

        rows, cols, vals = [], [], []
        tri = []
        for (x, y, z), v in coeffs.N.items():
            if v == 0:
                continue
            c = lam[idx[(x, y)]] * v
            rows.append(pidx[(x, z, y)])
            cols.append(idx[(x, y)])
            vals.append(c)
            tri.append((idx[(x, y)], idx[(z, y)], idx[(x, z)], c))
        self.alpha = sp.csr_matrix((np.array(vals, dtype=complex), (rows, cols)), shape=(P, A))

        left = [(pidx[(p, x, y)], idx[(x, y)]) for p, x, y in g.paths2]
        right = [(pidx[(x, y, u)], idx[(x, y)]) for x, y, u in g.paths2]
        ones = np.ones(P, dtype=complex)
        self.theta_left = sp.csr_matrix((ones, tuple(zip(*left))), shape=(P, A))
        self.theta_right = sp.csr_matrix((ones, tuple(zip(*right))), shape=(P, A))
        self.nabla = (self.theta_left - self.sigma @ self.theta_right + self.alpha).tocsc()

        # flattened index arrays used by the geodesic engine
        def arrays(entries):
            if not entries:
                return (np.zeros(0, int),) * 3 + (np.zeros(0, complex),)
            a, b, c, d = zip(*entries)
            return np.array(a), np.array(b), np.array(c), np.array(d, dtype=complex)

        self.square_arrays = arrays(sq)
        self.triangle_arrays = arrays(tri)

    def sigma_apply(self, T) -> np.ndarray:
        return self.sigma @ np.asarray(T, dtype=complex)

    def alpha_apply(self, w) -> np.ndarray:
        return self.alpha @ np.asarray(w, dtype=complex)

    def nabla_apply(self, w) -> np.ndarray:
        return self.nabla @ np.asarray(w, dtype=complex)

    def lam_L(self, key) -> complex:
        x, y = key[:2]
        return self.metric.lam_of(x, y) * self.coeffs.L.get(key, 0)

    def to_json(self):
        return {"graph": self.graph.to_json(), "metric": self.metric.to_json()["g"],
                "coeffs": self.coeffs.to_json()}

    @classmethod
    def from_json(cls, data, tol: float = TOL):
        if isinstance(data, str):
            data = json.loads(data)
        graph = DirectedGraph.from_json(data["graph"])
        metric = GraphMetric.from_dict(graph, data["metric"])
        return build_connection(metric, ConnectionCoeffs.from_json(data["coeffs"]), tol)


def build_connection(m: GraphMetric, c: ConnectionCoeffs, tol: float = TOL) -> Connection:
    squares, triangles = enumerate_configs(m.graph)
    known = set(squares) | set(triangles)
    for key in list(c.L) + list(c.N):
        if tuple(key) not in known:
            raise GraphError(f"{format_key(key)} is not a configuration of this graph")
    for key, d in hermiticity_defects(m, c):
        if d > tol:
            raise HermiticityError(key, d)
    return Connection(m, c)


# -- residuals ---------------------------------------------------------------

def star_compat_residual(conn: Connection) -> float:
    """max |sum_z lam_{u->y} lam_{x->z} L_{z->x,u->y} L_{x->z,v->u} - delta_{v,y}|."""
    g, L, lam = conn.graph, conn.coeffs.L, conn.metric.lam_of
    worst = 0.0
    for (x, u), idx in g.blocks.items():
        mids = [g.paths2[k][1] for k in idx]
        for y in mids:
            for v in mids:
                total = sum(lam(u, y) * lam(x, z) * L.get((z, x, u, y), 0) * L.get((x, z, v, u), 0)
                            for z in mids)
                worst = max(worst, abs(total - (v == y)))
    return float(worst)


def star_compat_dense(conn: Connection) -> float:
    """max-abs entry of sigma dagger sigma dagger - id, by dense composition."""
    S = conn.sigma.toarray()
    D = np.zeros_like(S)
    D[conn.graph.reversed_paths, np.arange(len(S))] = 1.0
    # dagger(T) = D conj(T), so sigma dagger sigma dagger = S D conj(S) D
    op = S @ D @ np.conj(S) @ D
    return float(np.max(np.abs(op - np.eye(len(S))))) if S.size else 0.0


def star_preserving_formula(conn: Connection) -> float:
    """max |lam_{y->x} N_{y->x,v->x} + lam_{x->y} sum_z N*_{x->y,z->y} lam_{y->z} L_{y->z,v->x}|."""
    g, L, N, lam = conn.graph, conn.coeffs.L, conn.coeffs.N, conn.metric.lam_of
    _, triangles = enumerate_configs(g)
    worst = 0.0
    for y, x, v in triangles:
        mids = [z for z in g.successors[x] if g.has(z, y)]
        total = lam(y, x) * N.get((y, x, v), 0) + lam(x, y) * sum(
            np.conj(N.get((x, y, z), 0)) * lam(y, z) * L.get((y, z, v, x), 0) for z in mids)
        worst = max(worst, abs(total))
    return float(worst)


def star_preserving_direct(conn: Connection) -> float:
    """max-abs of sigma(dagger(nabla(xi^*))) - nabla(xi) over basis 1-forms."""
    g = conn.graph
    nab = conn.nabla.toarray()
    worst = 0.0
    for a in range(g.n_arrows):
        lhs = conn.sigma_apply(dagger(g, -nab[:, g.reverse[a]]))
        worst = max(worst, float(np.max(np.abs(lhs - nab[:, a]), initial=0.0)))
    return worst


def star_preserving_residual(conn: Connection, direct: bool = True) -> float:
    r = star_preserving_formula(conn)
    if direct:
        r = max(r, star_preserving_direct(conn))
    return r


def metric_tensor_nabla(conn: Connection) -> dict:
    """Coefficients of nabla applied to the metric tensor, keyed by length-3 paths."""
    g, gm = conn.graph, conn.metric
    nab = conn.nabla
    sig = conn.sigma.tocsc()
    out = {p: 0j for p in g.paths3}
    for a, (x, y) in enumerate(g.arrows):
        ga = gm.g[a]
        col = nab.getcol(a)
        for r, v in zip(col.indices, col.data):
            p, q, end = g.paths2[r]
            if end == y:
                out[(p, q, y, x)] += ga * v
        col = nab.getcol(g.index[(y, x)])
        for r, d in zip(col.indices, col.data):
            q0, q1, q2 = g.paths2[r]
            if q0 != y:
                continue
            scol = sig.getcol(g.path_index[(x, y, q1)])
            for r2, e in zip(scol.indices, scol.data):
                _, z, _ = g.paths2[r2]
                out[(x, z, q1, q2)] += ga * d * e
    return out


def metric_residual(conn: Connection) -> float:
    vals = metric_tensor_nabla(conn).values()
    return float(max((abs(v) for v in vals), default=0.0))


def torsion_residual(conn: Connection) -> float:
    g = conn.graph
    nab = conn.nabla.toarray()
    worst = 0.0
    for a, (x, y) in enumerate(g.arrows):
        d_w = tensor(g, differential(g, g.delta(x)), differential(g, g.delta(y)))
        t = wedge_project(g, nab[:, a] - d_w)
        worst = max(worst, float(np.max(np.abs(t), initial=0.0)))
    return worst


class QLCResidual(NamedTuple):
    metric: float
    torsion: float
    star: float

    def ok(self, tol: float = TOL) -> bool:
        return max(self) < tol


def qlc_residual(conn: Connection) -> QLCResidual:
    return QLCResidual(metric_residual(conn), torsion_residual(conn), star_preserving_residual(conn))
