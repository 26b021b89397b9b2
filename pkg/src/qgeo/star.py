"""Levi-Civita connections on the n-leg star graph and the 4-star geodesic example.

Vertex 0 is the centre and 1..n the leaves.  The inbound (leaf to centre)
arrow i->0 carries the larger weight, g_{i->0} = sqrt(n) g_{0->i}, which is
the same as lam_{0->i}/lam_{i->0} = 1/sqrt(n).

A solution is fixed by one unit phase s_k per leg through

    lam_{0->k} L_{0->k,j->0} = 1 - delta_{jk} + s_k^{-1}/sqrt(n)

with alpha = 0.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .connection import (ConnectionCoeffs, GraphMetric, QLCResidual, build_connection,
                         qlc_residual, star_compat_residual, torsion_free_from_Q)
from .graph import TOL, DirectedGraph, GraphError

SQRT3 = math.sqrt(3.0)
BLOWUP_TIME = 8 * math.pi / (3 * SQRT3)

# (cos, sin) of the phase angles for the symmetric solutions
PHASES = {
    2: (-math.sqrt(2.0) / 2, math.sqrt(2.0) / 2),   # 3 pi / 4
    3: (-SQRT3 / 2, 0.5),                           # 5 pi / 6
    4: (-1.0, 0.0),                                 # pi
}


@dataclass(frozen=True)
class StarSolution:
    n: int
    s: tuple[complex, ...]
    metric: GraphMetric
    coeffs: ConnectionCoeffs
    kind: str = "a"

    @cached_property
    def connection(self):
        return build_connection(self.metric, self.coeffs)

    @property
    def phase(self) -> complex:
        return self.s[0]

    def residuals(self) -> QLCResidual:
        return qlc_residual(self.connection)

    def ratio_defect(self) -> float:
        return ratio_defect(self.metric, self.n)

    def lam_L_center(self) -> np.ndarray:
        """Matrix [k, j] of lam_{0->k} L_{0->k,j->0}."""
        m = self.metric
        out = np.empty((self.n, self.n), dtype=complex)
        for k in range(1, self.n + 1):
            for j in range(1, self.n + 1):
                out[k - 1, j - 1] = m.lam_of(0, k) * self.coeffs.L[(0, k, j, 0)]
        return out

    def to_json(self):
        return {"n": self.n, "kind": self.kind,
                "s": [[float(z.real), float(z.imag)] for z in self.s],
                "graph": self.metric.graph.to_json(), "metric": self.metric.to_json()["g"],
                "coeffs": self.coeffs.to_json()}


def star_metric(leg_g, n: int | None = None) -> GraphMetric:
    """Star metric with g_{0->i} = leg_g[i-1] and g_{i->0} = sqrt(n) g_{0->i}."""
    leg_g = np.asarray(leg_g, dtype=float)
    n = len(leg_g) if n is None else n
    if len(leg_g) != n:
        raise ValueError(f"need {n} leg values, got {len(leg_g)}")
    return star_metric_general(leg_g, math.sqrt(n) * leg_g)


def star_metric_general(g_out, g_in) -> GraphMetric:
    """Star metric from g_{0->i} (g_out) and g_{i->0} (g_in) separately."""
    g_out = np.asarray(g_out, dtype=float)
    g_in = np.asarray(g_in, dtype=float)
    graph = DirectedGraph.star(len(g_out))
    g = np.array([g_out[y - 1] if x == 0 else g_in[x - 1] for x, y in graph.arrows])
    return GraphMetric(graph, g)


def ratio_defect(m: GraphMetric, n: int) -> float:
    """max_i |lam_{0->i}/lam_{i->0} - 1/sqrt(n)|."""
    return max(abs(m.lam_of(0, i) / m.lam_of(i, 0) - 1 / math.sqrt(n)) for i in range(1, n + 1))


def star_coeffs(m: GraphMetric, phases) -> ConnectionCoeffs:
    graph = m.graph
    n = graph.n - 1
    phases = np.broadcast_to(np.asarray(phases, dtype=complex), (n,))
    Q = np.zeros(graph.n_arrows, dtype=complex)
    for k in range(1, n + 1):
        q = m[(k, 0)] / phases[k - 1] / math.sqrt(n)
        Q[graph.index[(0, k)]] = q
        Q[graph.index[(k, 0)]] = np.conj(q)
    return torsion_free_from_Q(m, Q)


def _check_legs(n, leg_g):
    if n < 2:
        raise ValueError("star graphs need at least two legs")
    leg_g = np.ones(n) if leg_g is None else np.asarray(leg_g, dtype=float)
    if leg_g.shape != (n,):
        raise ValueError(f"need {n} leg values")
    if np.any(leg_g <= 0):
        raise ValueError("leg metric values must be positive")
    return leg_g


def solve_star(n: int, leg_g=None) -> list[StarSolution]:
    """All symmetric-phase QLCs on the n-star (empty for n >= 5)."""
    leg_g = _check_legs(n, leg_g)
    if n not in PHASES:
        return []
    cos, sin = PHASES[n]
    branches = [complex(cos, sin)] if sin == 0 else [complex(cos, sin), complex(cos, -sin)]
    m = star_metric(leg_g)
    return [StarSolution(n, (s,) * n, m, star_coeffs(m, s)) for s in branches]


def mobius_partner(s1: complex) -> complex:
    r2 = math.sqrt(2.0)
    if abs(abs(s1) - 1) > 1e-12:
        raise ValueError("phase must have unit modulus")
    return -(s1 + r2) / (r2 * s1 + 1)


def solve_star2_family(s1: complex, leg_g=None) -> StarSolution:
    """The n = 2 solution with phases (s1, mobius_partner(s1))."""
    leg_g = _check_legs(2, leg_g)
    s = (complex(s1), complex(mobius_partner(s1)))
    m = star_metric(leg_g)
    return StarSolution(2, s, m, star_coeffs(m, s), kind="b")


def star_compat_defect(n: int, phases) -> np.ndarray:
    """*-compatibility defect of the equal-phase ansatz, one value per phase.

    With A[k, j] = lam_{0->k} L_{0->k,j->0} the centre block of the condition
    reads conj(A) A = 1 and the leaf blocks n A[i, j] conj(A[j, i]) = 1; the
    leg weights drop out.
    """
    t = 1 / np.atleast_1d(np.asarray(phases, dtype=complex))
    eye = np.eye(n)
    A = (1 - eye)[None] + t[:, None, None] / math.sqrt(n)
    centre = np.abs(np.conj(A) @ A - eye).max(axis=(1, 2))
    leaves = np.abs(n * A * np.conj(np.swapaxes(A, 1, 2)) - 1).max(axis=(1, 2))
    return np.maximum(centre, leaves)


def phase_scan_defect(n: int, samples: int = 10_000) -> float:
    """Smallest *-compatibility defect over equal phases sampled on the unit circle."""
    t = np.arange(samples) * (2 * math.pi / samples)
    return float(star_compat_defect(n, np.exp(1j * t)).min())


# -- 4-star geodesics ---------------------------------------------------------

def _star_parts(graph: DirectedGraph):
    n = graph.n - 1
    if graph != DirectedGraph.star(n):
        raise GraphError("expected a star graph")
    inward = np.array([graph.index[(i, 0)] for i in range(1, n + 1)])
    outward = np.array([graph.index[(0, i)] for i in range(1, n + 1)])
    return n, inward, outward


def star4_driving_force(X, mu, m: GraphMetric) -> np.ndarray:
    """Driving force for the s = -1 connection on the 4-star, component by component."""
    n, inward, outward = _star_parts(m.graph)
    mu = np.asarray(mu, dtype=float)
    X = np.asarray(X, dtype=complex)
    xin, xout = X[inward], X[outward]      # X^{0<-i}, X^{i<-0}
    lam0 = np.array([m.lam_of(0, i) for i in range(1, n + 1)])
    F = np.zeros_like(X)
    for y in range(n):
        f = 0.5 * xin[y] * np.sum(xout * (1 - lam0[y] / lam0))
        f -= 0.25 * mu[0] / mu[y + 1] * np.sum(xout * xin)
        f += (1 + mu[0] / mu[y + 1]) * xin[y] * xout[y]
        F[inward[y]] = f
        F[outward[y]] = mu[y + 1] / mu[0] * np.conj(f)
    return F


def star4_velocity_rhs(X, mu, m: GraphMetric) -> np.ndarray:
    """-dX/ds from the reduced four-field equation, outward parts by reality."""
    n, inward, outward = _star_parts(m.graph)
    mu = np.asarray(mu, dtype=float)
    X = np.asarray(X, dtype=complex)
    xin = X[inward]
    mui = mu[1:]
    lam0 = np.array([m.lam_of(0, i) for i in range(1, n + 1)])
    out = np.zeros_like(X)
    for y in range(n):
        bracket = (-xin[y] + np.sum(mui / mu[0] * xin)
                   - np.sum(np.conj(xin) * mui * lam0[y] / (mu[0] * lam0))
                   + (2 * mui[y] / mu[0] - 1) * np.conj(xin[y]))
        r = 0.5 * xin[y] * bracket + 0.25 * np.sum(mui / mui[y] * np.abs(xin) ** 2)
        out[inward[y]] = r
        out[outward[y]] = -mui[y] / mu[0] * np.conj(r)
    return out


def star4_xi_closed_form(s):
    s = np.asarray(s, dtype=float)
    if np.any(s >= BLOWUP_TIME):
        raise ValueError(f"closed form only valid for s < {BLOWUP_TIME}")
    return 0.25 * (SQRT3 * np.tan(math.pi / 6 - SQRT3 * s / 4) + 3)


def star4_lambda(s):
    return SQRT3 / (math.sqrt(2.0) * np.sqrt(1 + np.sin(math.pi / 6 + SQRT3 * np.asarray(s) / 2)))


def star4_hamiltonian(xi: float):
    """Reduced Hamiltonian on (psi_0, psi_1, psi_i) and its sorted eigenvalues."""
    M = np.array([[0, xi, 3 * (xi - 1)], [-xi, 0, 0], [1 - xi, 0, 0]], dtype=complex)
    H = -1j * M
    ev = np.linalg.eigvals(H)
    return H, np.sort(ev.real) + 1j * ev.imag[np.argsort(ev.real)]
