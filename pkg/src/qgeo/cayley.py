"""Cayley graphs of finite groups in the left-invariant basis.

Group elements are ``0..n-1`` with a composition table ``mul[x, y] = xy``.
A generator set C is stored as a tuple of elements; arrays indexed by
generators use positions in that tuple.  Per-generator functions are arrays
of shape ``(k, n)``, so ``X[a, x]`` is the coefficient of the arrow x -> xa.
Structure coefficients are ``Xi[a, b, c, x]``.

Right translation ``R_a(f)(x) = f(xa)`` is ``f[mul[:, a]]``.
"""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .connection import Connection, ConnectionCoeffs, GraphMetric
from .graph import TOL, DirectedGraph, wedge_project


class GroupError(ValueError):
    pass


class UnsupportedTwist(NotImplementedError):
    pass


class SupportError(ValueError):
    def __init__(self, entries):
        a, b, c = entries[0]
        super().__init__(f"{len(entries)} coefficient(s) violate the support condition, "
                         f"first Xi[{a},{b},{c}] (not a bimodule connection)")
        self.entries = entries


@dataclass(frozen=True)
class GroupSpec:
    table: np.ndarray
    generators: tuple[int, ...]

    def __post_init__(self):
        t = np.array(self.table, dtype=int)
        n = len(t)
        if t.shape != (n, n) or n < 1:
            raise GroupError("composition table must be square")
        if t.min() < 0 or t.max() >= n:
            raise GroupError("table entries out of range")
        for row in t:
            if len(set(row)) != n:
                raise GroupError("table rows must be permutations")
        for col in t.T:
            if len(set(col)) != n:
                raise GroupError("table columns must be permutations")
        if not np.array_equal(t[t], t[:, t]):      # (xy)z == x(yz)
            raise GroupError("composition is not associative")
        ids = [e for e in range(n) if np.array_equal(t[e], np.arange(n))]
        if not ids or not np.array_equal(t[:, ids[0]], np.arange(n)):
            raise GroupError("no two-sided identity")
        gens = tuple(dict.fromkeys(int(a) for a in self.generators))
        e = ids[0]
        if e in gens:
            raise GroupError("the identity cannot be a generator")
        if any(not 0 <= a < n for a in gens):
            raise GroupError("generator out of range")
        inv = np.argmax(t == e, axis=1)
        if set(int(inv[a]) for a in gens) != set(gens):
            raise GroupError("generators must be closed under inversion")
        t.flags.writeable = False
        object.__setattr__(self, "table", t)
        object.__setattr__(self, "generators", gens)

    @property
    def order(self) -> int:
        return len(self.table)

    @property
    def k(self) -> int:
        return len(self.generators)

    @cached_property
    def identity(self) -> int:
        return int(np.argmax(np.all(self.table == np.arange(self.order), axis=1)))

    @cached_property
    def inverse(self) -> np.ndarray:
        return np.argmax(self.table == self.identity, axis=1)

    @cached_property
    def gen_index(self) -> dict[int, int]:
        return {a: i for i, a in enumerate(self.generators)}

    @cached_property
    def gen_inverse(self) -> np.ndarray:
        """Position of a^{-1} for each generator position."""
        return np.array([self.gen_index[int(self.inverse[a])] for a in self.generators])

    @cached_property
    def abelian(self) -> bool:
        return bool(np.array_equal(self.table, self.table.T))

    def mul(self, *elems) -> int:
        out = self.identity
        for e in elems:
            out = int(self.table[out, e])
        return out

    def shift(self, f, elem):
        """R_elem(f); works on the last axis."""
        return np.asarray(f)[..., self.table[:, elem]]

    def is_class_function(self, f, tol: float = TOL) -> bool:
        f = np.asarray(f)
        t, inv = self.table, self.inverse
        for h in range(self.order):
            conj = t[t[h], inv[h]]
            if np.max(np.abs(f[conj] - f)) > tol:
                return False
        return True

    # -- constructors ---------------------------------------------------
    @classmethod
    def cyclic(cls, n: int, generators=(1, -1)):
        t = (np.arange(n)[:, None] + np.arange(n)[None, :]) % n
        return cls(t, tuple(int(a) % n for a in generators))

    @classmethod
    def symmetric3(cls, generators=None):
        perms = list(itertools.permutations(range(3)))
        index = {p: i for i, p in enumerate(perms)}
        t = np.array([[index[tuple(p[q[i]] for i in range(3))] for q in perms] for p in perms])
        if generators is None:
            # the three transpositions
            generators = [index[p] for p in perms
                          if sum(p[i] != i for i in range(3)) == 2]
        return cls(t, tuple(generators))

    @classmethod
    def from_json(cls, data):
        if isinstance(data, str):
            data = json.loads(data)
        if "cyclic" in data:
            return cls.cyclic(int(data["cyclic"]), data.get("generators", (1, -1)))
        try:
            table, gens = data["table"], data["generators"]
        except KeyError as exc:
            raise GroupError(f"group spec missing field {exc.args[0]!r}") from None
        if "order" in data and int(data["order"]) != len(table):
            raise GroupError("order does not match the table size")
        return cls(np.array(table, dtype=int), tuple(gens))

    def to_json(self):
        return {"order": self.order, "table": self.table.tolist(),
                "generators": list(self.generators)}


def cayley_graph(G: GroupSpec) -> DirectedGraph:
    return DirectedGraph(G.order, tuple((x, int(G.table[x, a]))
                                        for x in range(G.order) for a in G.generators))


def arrow_map(G: GroupSpec) -> np.ndarray:
    """Arrow index of x -> xa, shape (k, n)."""
    g = cayley_graph(G)
    return np.array([[g.index[(x, int(G.table[x, a]))] for x in range(G.order)]
                     for a in G.generators])


def to_arrows(G: GroupSpec, X) -> np.ndarray:
    X = np.asarray(X)
    out = np.zeros(G.k * G.order, dtype=np.result_type(X.dtype, complex))
    out[arrow_map(G)] = X
    return out


def from_arrows(G: GroupSpec, V) -> np.ndarray:
    return np.asarray(V)[arrow_map(G)]


# -- metrics and structure coefficients ---------------------------------------

def h_from_g(G: GroupSpec, g) -> np.ndarray:
    """Hermitian metric h_a = 1/R_a(g_{a^{-1}}), the lam of the arrow x -> xa."""
    g = np.asarray(g, dtype=float)
    out = np.empty_like(g)
    for i, a in enumerate(G.generators):
        out[i] = 1.0 / G.shift(g[G.gen_inverse[i]], a)
    return out


def graph_metric(G: GroupSpec, g) -> GraphMetric:
    return GraphMetric(cayley_graph(G), to_arrows(G, np.asarray(g, dtype=float)).real)


def support_mask(G: GroupSpec) -> np.ndarray:
    """mask[a, b, c] true where a^{-1} b c lies in C or is the identity."""
    allowed = set(G.generators) | {G.identity}
    gens = G.generators
    mask = np.zeros((G.k,) * 3, dtype=bool)
    for (i, a), (j, b), (l, c) in itertools.product(enumerate(gens), repeat=3):
        mask[i, j, l] = G.mul(int(G.inverse[a]), b, c) in allowed
    return mask


def support_violations(G: GroupSpec, Xi, tol: float = 0.0):
    Xi = np.asarray(Xi)
    bad = (np.max(np.abs(Xi), axis=-1) > tol) & ~support_mask(G)
    return [tuple(int(v) for v in idx) for idx in np.argwhere(bad)]


def check_support(G: GroupSpec, Xi, tol: float = 0.0):
    bad = support_violations(G, Xi, tol)
    if bad:
        raise SupportError(bad)


def random_xi(G: GroupSpec, rng, supported: bool = True, complex_: bool = True) -> np.ndarray:
    shape = (G.k, G.k, G.k, G.order)
    Xi = rng.normal(size=shape)
    if complex_:
        Xi = Xi + 1j * rng.normal(size=shape)
    if supported:
        Xi = Xi * support_mask(G)[..., None]
    return Xi


def _products(G: GroupSpec):
    """For each pair (a, b) the list of pairs (c, d) with cd = ab."""
    gens = G.generators
    prod = {}
    for (i, a), (j, b) in itertools.product(enumerate(gens), repeat=2):
        ab = G.mul(a, b)
        prod[i, j] = [(l, m) for (l, c), (m, d) in itertools.product(enumerate(gens), repeat=2)
                      if G.mul(c, d) == ab]
    return prod


def sigma_cayley(G: GroupSpec, Xi) -> np.ndarray:
    """S[a, b, c, d, x]: coefficient of e^c (x) e^d in sigma(e^a (x) e^b) at x."""
    Xi = np.asarray(Xi, dtype=complex)
    check_support(G, Xi)
    S = np.zeros((G.k,) * 4 + (G.order,), dtype=complex)
    for (i, j), pairs in _products(G).items():
        for l, m in pairs:
            S[i, j, l, m] = Xi[i, l, m]
    return S


def alpha_part(G: GroupSpec, Xi) -> np.ndarray:
    """Entries Xi[a, c, d] with cd = a, which sit outside sigma; mask of shape (k,k,k)."""
    gens = G.generators
    mask = np.zeros((G.k,) * 3, dtype=bool)
    for (i, a), (l, c), (m, d) in itertools.product(enumerate(gens), repeat=3):
        mask[i, l, m] = G.mul(c, d) == a
    return mask


def to_graph_connection(G: GroupSpec, Xi, g) -> Connection:
    """The same connection written with square and triangle coefficients.

    Entries with cd = ab, b in C, give squares; entries with cd = a have no
    place in sigma and become triangle (alpha) coefficients.
    """
    Xi = np.asarray(Xi, dtype=complex)
    check_support(G, Xi)
    m = graph_metric(G, g)
    h = h_from_g(G, g)
    t, gens = G.table, G.generators
    gi = G.gen_index
    inv = G.inverse
    L, N = {}, {}
    for (i, a), (l, c), (j, d) in itertools.product(enumerate(gens), repeat=3):
        cd = G.mul(c, d)
        b = G.mul(int(inv[a]), cd)
        for x in range(G.order):
            v = Xi[i, l, j, x]
            if v == 0:
                continue
            y, z = int(t[x, a]), int(t[x, c])
            if b in gi:
                L[(x, y, z, int(t[x, cd]))] = v / h[i, x]
            elif cd == a:
                N[(x, y, z)] = -v / h[i, x]
    return Connection(m, ConnectionCoeffs(L, N))


def left_connection_matrix(G: GroupSpec, Xi) -> np.ndarray:
    """Dense nabla on arrows from nabla e^a = -sum Gamma^a_{bc} e^b (x) e^c and left Leibniz."""
    graph = cayley_graph(G)
    Xi = np.asarray(Xi, dtype=complex)
    t, gens, inv = G.table, G.generators, G.inverse
    idx, pidx = graph.index, graph.path_index
    M = np.zeros((len(graph.paths2), graph.n_arrows), dtype=complex)
    for (i, a) in enumerate(gens):
        for x in range(G.order):
            col = idx[(x, int(t[x, a]))]
            y = int(t[x, a])
            # d(delta_x) (x) e^a
            for b in gens:
                w = int(t[x, inv[b]])
                M[pidx[(w, x, y)], col] += 1.0
                M[pidx[(x, int(t[x, b]), int(t[t[x, b], a]))], col] -= 1.0
            for (l, b), (m, c) in itertools.product(enumerate(gens), repeat=2):
                gamma = Xi[i, l, m, x] - (i == m)
                if gamma != 0:
                    M[pidx[(x, int(t[x, b]), int(t[t[x, b], c]))], col] -= gamma
    return M


def bimodule_defect(G: GroupSpec, Xi) -> float:
    """max |nabla(w f) - (nabla w) f - sigma(w (x) df)| over arrows w and deltas f.

    sigma is taken from the product formula regardless of the support
    condition, so a positive value means the connection is not bimodule.
    """
    graph = cayley_graph(G)
    Xi = np.asarray(Xi, dtype=complex)
    M = left_connection_matrix(G, Xi)
    S = np.zeros((G.k,) * 4 + (G.order,), dtype=complex)
    for (i, j), pairs in _products(G).items():
        for l, m in pairs:
            S[i, j, l, m] = Xi[i, l, m]
    t, gens = G.table, G.generators
    pidx = graph.path_index
    ends = np.array([p[2] for p in graph.paths2])
    worst = 0.0
    for (i, a) in enumerate(gens):
        for x in range(G.order):
            y = int(t[x, a])
            col = M[:, graph.index[(x, y)]]
            for s in range(G.order):
                lhs = (col if y == s else 0) - col * (ends == s)
                rhs = np.zeros(len(graph.paths2), dtype=complex)
                for j, b in enumerate(gens):
                    u = int(t[y, b])
                    df = (u == s) - (y == s)
                    if df == 0:
                        continue
                    for l, mm in _products(G)[i, j]:
                        z = int(t[x, gens[l]])
                        rhs[pidx[(x, z, u)]] += df * S[i, j, l, mm, x]
                worst = max(worst, float(np.max(np.abs(lhs - rhs))))
    return worst


# -- residual checks ----------------------------------------------------------

def hermitian_check_cayley(G: GroupSpec, h, Xi) -> float:
    """max |h_b R_c(conj Xi^a_{c^{-1} b}) - Xi^b_{ca} R_c(h_a)|."""
    h = np.asarray(h, dtype=float)
    Xi = np.asarray(Xi, dtype=complex)
    ginv = G.gen_inverse
    worst = 0.0
    for ia, ib, ic in itertools.product(range(G.k), repeat=3):
        c = G.generators[ic]
        lhs = h[ib] * G.shift(np.conj(Xi[ia, ginv[ic], ib]), c)
        rhs = Xi[ib, ic, ia] * G.shift(h[ia], c)
        worst = max(worst, float(np.max(np.abs(lhs - rhs))))
    return worst


def hermitian_dense_cayley(G: GroupSpec, h, Xi) -> float:
    """Antihermiticity of the 1-form valued matrix Xi h, via arrow-basis 1-forms."""
    from .graph import star_oneform
    graph = cayley_graph(G)
    h = np.asarray(h, dtype=float)
    Xi = np.asarray(Xi, dtype=complex)
    amap = arrow_map(G)
    W = np.zeros((G.k, G.k, graph.n_arrows), dtype=complex)
    for ia, ib, ic in itertools.product(range(G.k), repeat=3):
        # Xi^a_{cb} e^c h_b = Xi^a_{cb} R_c(h_b) e^c
        W[ia, ib, amap[ic]] += Xi[ia, ic, ib] * G.shift(h[ib], G.generators[ic])
    worst = 0.0
    for ia, ib in itertools.product(range(G.k), repeat=2):
        worst = max(worst, float(np.max(np.abs(star_oneform(graph, W[ia, ib]) + W[ib, ia]))))
    return worst


def star_compat_cayley(G: GroupSpec, Xi) -> float:
    """max over a, b and rs = (ab)^{-1} of
    |sum_{cd=ab} R_{(ab)^{-1}}(conj Xi^a_{cd}) Xi^{d^{-1}}_{rs} - delta_{b^{-1},r} delta_{a^{-1},s}|."""
    Xi = np.asarray(Xi, dtype=complex)
    prod = _products(G)
    ginv = G.gen_inverse
    gens = G.generators
    worst = 0.0
    for (ia, ib), pairs in prod.items():
        ab = G.mul(gens[ia], gens[ib])
        iab = int(G.inverse[ab])
        targets = [(r, s) for r in range(G.k) for s in range(G.k)
                   if G.mul(gens[r], gens[s]) == iab]
        for r, s in targets:
            tot = np.zeros(G.order, dtype=complex)
            for ic, id_ in pairs:
                tot += G.shift(np.conj(Xi[ia, ic, id_]), iab) * Xi[ginv[id_], r, s]
            tot -= float(r == ginv[ib] and s == ginv[ia])
            worst = max(worst, float(np.max(np.abs(tot))))
    return worst


def torsion_check_cayley(G: GroupSpec, Xi) -> float:
    """max-abs of the minimal 2-form image of (id + sigma)(e^a (x) e^b), and of alpha(e^a)."""
    Xi = np.asarray(Xi, dtype=complex)
    graph = cayley_graph(G)
    t, gens = G.table, G.generators
    pidx = graph.path_index
    prod = _products(G)
    amask = alpha_part(G, Xi)
    worst = 0.0
    for ia, a in enumerate(gens):
        for ib, b in enumerate(gens):
            T = np.zeros(len(graph.paths2), dtype=complex)
            for x in range(G.order):
                y = int(t[x, a])
                T[pidx[(x, y, int(t[y, b]))]] += 1.0
                for ic, id_ in prod[ia, ib]:
                    z = int(t[x, gens[ic]])
                    T[pidx[(x, z, int(t[z, gens[id_]]))]] += Xi[ia, ic, id_, x]
            worst = max(worst, float(np.max(np.abs(wedge_project(graph, T)))))
        if amask[ia].any():
            T = np.zeros(len(graph.paths2), dtype=complex)
            for ic, id_ in zip(*np.nonzero(amask[ia])):
                for x in range(G.order):
                    z = int(t[x, gens[ic]])
                    T[pidx[(x, z, int(t[z, gens[id_]]))]] -= Xi[ia, ic, id_, x]
            worst = max(worst, float(np.max(np.abs(wedge_project(graph, T)))))
    return worst


# -- divergence and vector fields ---------------------------------------------

def _div_weights(G: GroupSpec, g, Xi) -> np.ndarray:
    """w_a = g_a sum_b Xi^a_{b,b^{-1}} / R_b(g_{b^{-1}})."""
    g = np.asarray(g, dtype=float)
    ginv = G.gen_inverse
    w = np.zeros((G.k, G.order), dtype=complex)
    for ia in range(G.k):
        for ib, b in enumerate(G.generators):
            w[ia] += Xi[ia, ib, ginv[ib]] / G.shift(g[ginv[ib]], b)
        w[ia] *= g[ia]
    return w


def div_cayley(G: GroupSpec, Xi, g, X) -> np.ndarray:
    """Geometric divergence of the field sum_a f_a X^a."""
    X = np.asarray(X, dtype=complex)
    w = _div_weights(G, g, np.asarray(Xi, dtype=complex))
    ginv = G.gen_inverse
    out = X.sum(axis=0)
    for ia, a in enumerate(G.generators):
        out = out - w[ia] * G.shift(X[ginv[ia]], a)
    return out


def div_int_cayley(G: GroupSpec, mu, X) -> np.ndarray:
    mu = np.asarray(mu, dtype=float)
    X = np.asarray(X, dtype=complex)
    out = np.zeros(G.order, dtype=complex)
    for ia, a in enumerate(G.generators):
        out += X[ia] - G.shift(X[ia] * mu, int(G.inverse[a])) / mu
    return out


def divergence_compat_cayley(G: GroupSpec, Xi, g, mu, sites=None) -> float:
    """max |R_a(mu)/mu - g_a sum_b Xi^a_{b,b^{-1}}/R_b(g_{b^{-1}})|, optionally over some sites."""
    mu = np.asarray(mu, dtype=float)
    w = _div_weights(G, g, np.asarray(Xi, dtype=complex))
    sel = slice(None) if sites is None else np.asarray(sites)
    worst = 0.0
    for ia, a in enumerate(G.generators):
        worst = max(worst, float(np.max(np.abs(G.shift(mu, a) / mu - w[ia])[sel])))
    return worst


def star_vf_cayley(G: GroupSpec, mu, X) -> np.ndarray:
    """(X^*)^a = -conj(R_a(X^{a^{-1}})) R_a(mu)/mu."""
    mu = np.asarray(mu, dtype=float)
    X = np.asarray(X, dtype=complex)
    ginv = G.gen_inverse
    out = np.empty_like(X)
    for ia, a in enumerate(G.generators):
        out[ia] = -np.conj(G.shift(X[ginv[ia]], a)) * G.shift(mu, a) / mu
    return out


def reality_defect_cayley(G: GroupSpec, mu, X) -> float:
    X = np.asarray(X, dtype=complex)
    return float(np.max(np.abs(star_vf_cayley(G, mu, X) - X)))


def nabla_X_cayley(G: GroupSpec, Xi, X) -> np.ndarray:
    """T[a, b, x]: coefficient of f_a (x) e^b in nabla X at x."""
    Xi = np.asarray(Xi, dtype=complex)
    X = np.asarray(X, dtype=complex)
    out = np.zeros((G.k, G.k, G.order), dtype=complex)
    for ia, ib in itertools.product(range(G.k), repeat=2):
        b = G.generators[ib]
        for id_ in range(G.k):
            out[ia, ib] += Xi[ia, ib, id_] * G.shift(X[id_], b)
        out[ia, ib] -= X[ia]
    return out


def _check_twist(G: GroupSpec, mu):
    if not G.abelian and not G.is_class_function(mu):
        raise UnsupportedTwist("unsupported twist: non-central measure on a nonabelian group")


def cayley_free_rhs(G: GroupSpec, Xi, mu, X) -> np.ndarray:
    """B^a = X^a (kappa - R_a kappa) + sum Xi^a_{bd} R_b(X^d) X^b - sum_b X^a X^b."""
    _check_twist(G, mu)
    X = np.asarray(X, dtype=complex)
    kappa = 0.5 * div_int_cayley(G, mu, X)
    T = nabla_X_cayley(G, Xi, X)
    out = np.empty_like(X)
    for ia, a in enumerate(G.generators):
        out[ia] = X[ia] * (kappa - G.shift(kappa, a)) + np.sum(T[ia] * X, axis=0)
    return out


def cayley_force(G: GroupSpec, Xi, mu, X) -> np.ndarray:
    """F^a = -(B^a + R_a(conj(B^{a^{-1}}) mu)/mu)/2."""
    B = cayley_free_rhs(G, Xi, mu, X)
    return -0.5 * (B - star_vf_cayley(G, mu, B))


def velocity_rhs_cayley(G: GroupSpec, Xi, g, mu, X, F=None, tol: float = 1e-8) -> np.ndarray:
    """-2 dX^a/ds for a real field with the generated force.

    With F given the plain equation is used instead: returns 2(B + F).
    """
    _check_twist(G, mu)
    mu = np.asarray(mu, dtype=float)
    X = np.asarray(X, dtype=complex)
    Xi = np.asarray(Xi, dtype=complex)
    if F is not None:
        return 2 * (cayley_free_rhs(G, Xi, mu, X) + np.asarray(F, dtype=complex))
    d = reality_defect_cayley(G, mu, X)
    if d > tol:
        from .geodesic import RealityLoss
        raise RealityLoss(0.0, d)
    gens, ginv, inv = G.generators, G.gen_inverse, G.inverse
    T = nabla_X_cayley(G, Xi, X)
    out = np.empty_like(X)
    for ia, a in enumerate(gens):
        acc = np.zeros(G.order, dtype=complex)
        for ib, b in enumerate(gens):
            acc += G.shift(X[ib] * mu, G.mul(a, int(inv[b])))
        # T already carries the -X^a sum_b X^b term
        r = X[ia] * acc / G.shift(mu, a) + np.sum(T[ia] * X, axis=0)
        ainv = ginv[ia]
        for ib, b in enumerate(gens):
            ab = G.mul(a, int(inv[b]))
            for id_, d_ in enumerate(gens):
                coef = G.shift(np.conj(Xi[ainv, ginv[ib], ginv[id_]]), a)
                inner = G.shift(X[id_] * mu, int(inv[d_])) * X[ib]
                r -= coef * G.shift(inner, ab) / mu
        out[ia] = r
    return out


def amplitude_rhs_cayley(G: GroupSpec, mu, X, psi) -> np.ndarray:
    """psi' = -sum_a (d_a psi) X^a - psi kappa."""
    X = np.asarray(X, dtype=complex)
    psi = np.asarray(psi, dtype=complex)
    kappa = 0.5 * div_int_cayley(G, mu, X)
    out = -psi * kappa
    for ia, a in enumerate(G.generators):
        out -= (G.shift(psi, a) - psi) * X[ia]
    return out
