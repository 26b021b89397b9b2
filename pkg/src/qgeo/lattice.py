"""The integer line, realised on a periodic window Z_N, with edge-symmetric metrics.

Site functions are length-N arrays.  ``g[i]`` is the weight of the edge
i -- i+1, the vector field has components X^+ (arrow i -> i+1) and X^-
(arrow i -> i-1).  R_+(f)(i) = f(i+1) and R_-(f)(i) = f(i-1).

Metrics and measures on Z itself rarely descend to the window (a geometric
sequence does not close up), so both carry their local ratios explicitly:
``LatticeMetric.rho`` is g_{i+1}/g_i and ``LatticeMeasure.mu_plus`` is
mu_{i+1}/mu_i.  All stencils only ever use these ratios; the seam is only
wrong when a field reaches it, which the boundary monitor reports.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .cayley import GroupSpec
from .geodesic import CompensatedRK4

SEAM_SITES = 5


def _frozen(a):
    a = np.array(a)
    a.flags.writeable = False
    return a


def Rp(f):
    return np.roll(f, -1)


def Rm(f):
    return np.roll(f, 1)


@dataclass(frozen=True)
class LatticeMetric:
    g: np.ndarray
    rho_const: float | None = None

    def __post_init__(self):
        g = np.asarray(self.g, dtype=float).copy()
        if g.ndim != 1 or len(g) < 3:
            raise ValueError("lattice metric needs at least three sites")
        if np.any(g <= 0) or not np.all(np.isfinite(g)):
            raise ValueError("lattice metric values must be positive")
        if self.rho_const is not None and self.rho_const <= 0:
            raise ValueError("rho must be positive")
        g.flags.writeable = False
        object.__setattr__(self, "g", g)

    @classmethod
    def exponential(cls, N: int, rho: float, g0: float = 1.0):
        """g_i = g0 rho^i on the window, with constant ratio across the seam."""
        return cls(g0 * float(rho) ** np.arange(N), float(rho))

    @property
    def N(self) -> int:
        return len(self.g)

    @cached_property
    def rho(self) -> np.ndarray:
        """rho_+ = R_+(g)/g."""
        if self.rho_const is not None:
            return _frozen(np.full(self.N, self.rho_const))
        return _frozen(Rp(self.g) / self.g)

    @cached_property
    def rho_minus(self) -> np.ndarray:
        return _frozen(Rm(Rm(1.0 / self.rho)))

    @property
    def flat(self) -> bool:
        r = self.rho
        return bool(np.allclose(r, r[0], rtol=1e-12, atol=0))

    def g_pm(self) -> np.ndarray:
        """Per-generator weights (g_+, g_-) for the Cayley engine."""
        return np.array([self.g, Rm(self.g)])

    def to_json(self):
        out = {"g": [float(v) for v in self.g]}
        if self.rho_const is not None:
            out["rho"] = self.rho_const
        return out

    @classmethod
    def from_json(cls, data):
        if isinstance(data, str):
            data = json.loads(data)
        if "g" in data:
            return cls(np.array(data["g"], dtype=float), data.get("rho"))
        if "rho" in data and "N" in data:
            return cls.exponential(int(data["N"]), float(data["rho"]), float(data.get("g0", 1.0)))
        raise ValueError("lattice metric needs 'g' or both 'N' and 'rho'")


@dataclass(frozen=True)
class LatticeMeasure:
    values: np.ndarray
    mu_plus: np.ndarray

    @classmethod
    def constant(cls, N: int, value: float = 1.0):
        return cls(np.full(N, float(value)), np.ones(N))

    @classmethod
    def from_values(cls, mu):
        mu = np.asarray(mu, dtype=float)
        return cls(mu, Rp(mu) / mu)

    @classmethod
    def geometric(cls, N: int, rho: float, mu0: float = 1.0):
        return cls(mu0 * float(rho) ** np.arange(N), np.full(N, float(rho)))

    def __post_init__(self):
        object.__setattr__(self, "values", _frozen(np.asarray(self.values, dtype=float)))
        object.__setattr__(self, "mu_plus", _frozen(np.asarray(self.mu_plus, dtype=float)))
        if self.values.shape != self.mu_plus.shape:
            raise ValueError("measure values and ratios must have the same length")
        if np.any(self.values == 0) or np.any(self.mu_plus <= 0):
            raise ValueError("lattice measure must be nonzero with positive ratios")

    @cached_property
    def mu_minus(self) -> np.ndarray:
        return _frozen(1.0 / Rm(self.mu_plus))


def lattice_group(N: int) -> GroupSpec:
    if N < 3:
        raise ValueError("the lattice window needs N >= 3")
    return GroupSpec.cyclic(N, (1, -1))


def qlc_z(m: LatticeMetric) -> np.ndarray:
    """Structure coefficients Xi[a, b, c, i] of the *-preserving QLC (generator order +, -)."""
    Xi = np.zeros((2, 2, 2, m.N))
    Xi[0, 0, 0] = m.rho
    Xi[0, 1, 0] = 1.0
    Xi[1, 1, 1] = m.rho_minus
    Xi[1, 0, 1] = 1.0
    return Xi


# -- fields ---------------------------------------------------------------------

def reality_partner(mu: LatticeMeasure, Xp) -> np.ndarray:
    """X^- making (X^+, X^-) real for the measure: X^- = -mu_- conj(R_- X^+)."""
    return -mu.mu_minus * np.conj(Rm(np.asarray(Xp)))


def reality_defect_z(mu: LatticeMeasure, Xp, Xm) -> float:
    return float(np.max(np.abs(np.asarray(Xm) - reality_partner(mu, Xp))))


def div_int_z(mu: LatticeMeasure, Xp, Xm) -> np.ndarray:
    Xp, Xm = np.asarray(Xp), np.asarray(Xm)
    return -(mu.mu_minus * Rm(Xp) - Xp + mu.mu_plus * Rp(Xm) - Xm)


def div_z(m: LatticeMetric, Xp, Xm) -> np.ndarray:
    """Geometric divergence for the lattice QLC."""
    Xp, Xm = np.asarray(Xp), np.asarray(Xm)
    r = Rm(m.rho)
    return Xp - Rm(Xp) / r + Xm - r * Rp(Xm)


def nabla_X_z(m: LatticeMetric, Xp, Xm) -> np.ndarray:
    """T[a, b, i]: coefficient of f_a (x) e^b in nabla X (order +, -)."""
    X = np.array([Xp, Xm], dtype=complex)
    shifts = (Rp, Rm)
    rhos = (m.rho, m.rho_minus)
    T = np.empty((2, 2, m.N), dtype=complex)
    for a in range(2):
        for b in range(2):
            T[a, b] = shifts[b](X[a]) - X[a]
        T[a, a] += (rhos[a] - 1) * shifts[a](X[a])
    return T


def _half(Xs, Xo, R, Ro, rho_s, rho_o, mu_s, mu_o):
    """One sign of the ratio form; s is the component being evolved, o the other."""
    return ((mu_o * R(rho_o) * Ro(Xs) - rho_s * R(Xs) + (1 - 1 / mu_s) * Xs) * Xs
            + (mu_s * R(Xs) - R(mu_s) * Xs) * R(R(Xo))
            - (Ro(Xs) - Xs) * Xo)


def velocity_rhs_z(m: LatticeMetric, mu: LatticeMeasure, Xp, Xm):
    """(2 dX^+/ds, 2 dX^-/ds) with the generated force, any measure."""
    Xp, Xm = np.asarray(Xp), np.asarray(Xm)
    rp, rm = m.rho, m.rho_minus
    mp, mm = mu.mu_plus, mu.mu_minus
    return (_half(Xp, Xm, Rp, Rm, rp, rm, mp, mm),
            _half(Xm, Xp, Rm, Rp, rm, rp, mm, mp))


def force_z(m: LatticeMetric, mu: LatticeMeasure, Xp, Xm):
    """(F^+, F^-) of the generated driving force."""
    Xp, Xm = np.asarray(Xp), np.asarray(Xm)
    rp, rm = m.rho, m.rho_minus
    mp, mm = mu.mu_plus, mu.mu_minus

    def one(Xs, Xo, R, Ro, rho_s, rho_o, mu_s, mu_o):
        w = Xo * Ro(Xs)
        return 0.5 * ((1 - rho_s) * R(Xs) * Xs + mu_o * (1 - R(rho_o)) * Ro(Xs) * Xs
                      - (mu_s * R(R(w) - w) - (R(w) - w)))

    return one(Xp, Xm, Rp, Rm, rp, rm, mp, mm), one(Xm, Xp, Rm, Rp, rm, rp, mm, mp)


def velocity_rhs_real(m: LatticeMetric, Xp) -> np.ndarray:
    """dX^+/ds for real X^+ and constant measure."""
    Xp = np.asarray(Xp)
    rho = m.rho
    return (0.5 * ((1 / Rm(rho) - 1) * Rm(Xp) + (1 - rho) * Rp(Xp)) * Xp
            + 0.5 * (Rm(Xp) ** 2 - Rp(Xp) ** 2))


def velocity_rhs_flat(rho: float, Xp) -> np.ndarray:
    """dX^+/ds for real X^+, constant ratio rho and measure mu = g."""
    Xp = np.asarray(Xp)
    return (0.5 * (1 - rho) * (Rm(Xp) / rho ** 2 + Rp(Xp) - Xp / rho) * Xp
            + 0.5 * (Rm(Xp) ** 2 / rho - Rp(Xp) ** 2))


def kappa_flat(rho: float, Xp) -> np.ndarray:
    Xp = np.asarray(Xp)
    return Xp - Rm(Xp) / rho


def flat_force(rho: float, Xp) -> np.ndarray:
    """F^+ in the flat case, in terms of X^+ alone."""
    Xp = np.asarray(Xp)
    a2 = np.abs(Xp) ** 2
    d = Rm(a2) - a2
    return 0.5 * ((1 - rho) * (Rp(Xp) - Rm(Xp) / rho ** 2) * Xp - (Rp(d) - d / rho))


def amplitude_rhs_z(m: LatticeMetric, mu: LatticeMeasure, Xp, psi, mode: str = "general", Xm=None):
    Xp = np.asarray(Xp)
    psi = np.asarray(psi)
    if mode == "general":
        if Xm is None:
            Xm = reality_partner(mu, Xp)
        kappa = 0.5 * div_int_z(mu, Xp, Xm)
        return -(Rp(psi) - psi) * Xp - (Rm(psi) - psi) * Xm - psi * kappa
    if mode == "real":
        return -Rp(psi) * Xp + Rm(psi) * Rm(Xp)
    if mode == "flat":
        if m.rho_const is None and not m.flat:
            raise ValueError("flat amplitude flow needs constant rho")
        return -Rp(psi) * Xp + Rm(psi) * Rm(Xp) / m.rho[0]
    raise ValueError(f"unknown amplitude mode {mode!r}")


# -- scenarios ----------------------------------------------------------------------

def gaussian(N: int, center: float, width: float, amp: float = 1.0) -> np.ndarray:
    i = np.arange(N)
    return amp * np.exp(-0.5 * ((i - center) / width) ** 2)


def cosine_dip_metric(N: int, center: float = 50, half_width: float = 20,
                      depth: float = 0.8) -> np.ndarray:
    """1 outside the dip, a raised cosine down to 1 - depth at the centre."""
    i = np.arange(N)
    u = np.clip(np.abs(i - center) / half_width, 0, 1)
    return 1 - depth * 0.5 * (1 + np.cos(np.pi * u))


SCENARIO_DEFAULTS = {
    "cosine_dip": {"N": 128, "dip_center": 50, "dip_half_width": 20, "dip_depth": 0.8,
                   "x_center": 40, "x_amp": 1.0, "psi_center": 40, "width": 5.0},
    "exponential": {"N": 128, "rho": 2.0, "g0": 1.0, "x_center": 40, "x_amp": 1.0,
                    "psi_center": 40, "width": 5.0},
}


@dataclass
class LatticeScenario:
    name: str
    metric: LatticeMetric
    measure: LatticeMeasure
    Xp0: np.ndarray
    psi0: np.ndarray
    params: dict = field(default_factory=dict)

    @property
    def flat(self) -> bool:
        return self.name == "exponential"


def scenario(name: str, **params) -> LatticeScenario:
    if name not in SCENARIO_DEFAULTS:
        raise ValueError(f"unknown scenario {name!r}")
    unknown = set(params) - set(SCENARIO_DEFAULTS[name])
    if unknown:
        raise ValueError(f"unknown scenario parameter(s) {sorted(unknown)}")
    p = {**SCENARIO_DEFAULTS[name], **params}
    N = int(p["N"])
    if name == "cosine_dip":
        m = LatticeMetric(cosine_dip_metric(N, p["dip_center"], p["dip_half_width"], p["dip_depth"]))
        mu = LatticeMeasure.constant(N)
    else:
        m = LatticeMetric.exponential(N, p["rho"], p["g0"])
        mu = LatticeMeasure.geometric(N, p["rho"], p["g0"])
    Xp = gaussian(N, p["x_center"], p["width"], p["x_amp"])
    psi = gaussian(N, p["psi_center"], p["width"]).astype(complex)
    psi /= math.sqrt(np.sum(mu.values * np.abs(psi) ** 2))
    return LatticeScenario(name, m, mu, Xp, psi, p)


# -- evolution ------------------------------------------------------------------------

def seam_fraction(mu: LatticeMeasure, psi, sites: int = SEAM_SITES) -> float:
    """Share of the probability mass within ``sites`` of the window seam."""
    w = mu.values * np.abs(psi) ** 2
    return float((w[:sites].sum() + w[-sites:].sum()) / w.sum())


def sign_alternations(Xp, rel: float = 1e-6) -> int:
    """Sign changes of the forward difference of X^+, ignoring entries below rel * max."""
    d = np.real(Rp(Xp) - Xp)[:-1]
    d = d[np.abs(d) > rel * np.max(np.abs(d))]
    return int(np.sum(np.sign(d[1:]) != np.sign(d[:-1])))


def centroid(f) -> float:
    w = np.abs(np.real(f))
    return float(np.sum(np.arange(len(w)) * w) / np.sum(w))


@dataclass
class LatticeRun:
    s: np.ndarray
    Xp: np.ndarray
    psi: np.ndarray
    mass: np.ndarray
    seam: np.ndarray
    reality: np.ndarray
    imag: np.ndarray
    Xm: np.ndarray | None = None

    @property
    def mass_drift(self) -> float:
        return float(np.max(np.abs(self.mass - self.mass[0])))

    def header(self, N):
        cols = ["s"] + [f"X[{i}->{(i + 1) % N}].re" for i in range(N)]
        cols += [f"psi[{i}].{c}" for i in range(N) for c in ("re", "im")]
        return cols + ["prob_mass", "seam_mass", "reality_defect"]

    def rows(self):
        for k in range(len(self.s)):
            row = [self.s[k], *np.real(self.Xp[k])]
            for z in self.psi[k]:
                row += [z.real, z.imag]
            yield row + [self.mass[k], self.seam[k], self.reality[k]]

    def summary(self):
        return {"s_final": float(self.s[-1]), "mass_drift": self.mass_drift,
                "max_seam_mass": float(self.seam.max()),
                "max_reality_defect": float(self.reality.max()),
                "max_imag_X": float(self.imag.max()),
                "sign_alternations": sign_alternations(self.Xp[-1]),
                "centroid_start": centroid(self.Xp[0]), "centroid_end": centroid(self.Xp[-1])}


def evolve_lattice(scn: LatticeScenario, ds: float, steps: int, path: str = "real",
                   record_every: int = 1) -> LatticeRun:
    """RK4 run of the velocity and amplitude flows.

    path="real" integrates X^+ alone in real arithmetic (psi as a real/imag
    pair).  path="complex" integrates X^+ and X^- independently from the
    two-component equation with the generated force.
    """
    if ds <= 0 or steps < 1:
        raise ValueError("need ds > 0 and steps >= 1")
    m, mu, N = scn.metric, scn.measure, scn.metric.N
    flat = m.rho_const is not None or m.flat
    const_mu = bool(np.all(mu.mu_plus == 1.0))

    if path == "real":
        if flat and not const_mu:
            rho = float(m.rho[0])
            vel = lambda X: velocity_rhs_flat(rho, X)
            hop = lambda X, p: -Rp(p) * X + Rm(p) * Rm(X) / rho
        elif const_mu:
            vel = lambda X: velocity_rhs_real(m, X)
            hop = lambda X, p: -Rp(p) * X + Rm(p) * Rm(X)
        else:
            raise ValueError("the real path needs a constant measure or a flat metric with mu = g")

        def f(y):
            X, pr, pi = y[:N], y[N:2 * N], y[2 * N:]
            return np.concatenate([vel(X), hop(X, pr), hop(X, pi)])

        y0 = np.concatenate([np.asarray(scn.Xp0, dtype=float), scn.psi0.real, scn.psi0.imag])

        def unpack(y):
            return y[:N].copy(), None, y[N:2 * N] + 1j * y[2 * N:]
    elif path == "complex":
        def f(y):
            Xp, Xm, psi = y[:N], y[N:2 * N], y[2 * N:]
            vp, vm = velocity_rhs_z(m, mu, Xp, Xm)
            return np.concatenate([0.5 * vp, 0.5 * vm, amplitude_rhs_z(m, mu, Xp, psi, "general", Xm)])

        Xp0 = np.asarray(scn.Xp0, dtype=complex)
        y0 = np.concatenate([Xp0, reality_partner(mu, Xp0), scn.psi0])

        def unpack(y):
            return y[:N].copy(), y[N:2 * N].copy(), y[2 * N:].copy()
    else:
        raise ValueError("path must be 'real' or 'complex'")

    stepper = CompensatedRK4(f, y0)
    rec = {k: [] for k in ("s", "Xp", "Xm", "psi", "mass", "seam", "reality", "imag")}

    def record(s, y):
        Xp, Xm, psi = unpack(y)
        rec["s"].append(s)
        rec["Xp"].append(Xp)
        rec["Xm"].append(Xm)
        rec["psi"].append(psi)
        rec["mass"].append(float(np.sum(mu.values * np.abs(psi) ** 2)))
        rec["seam"].append(seam_fraction(mu, psi))
        rec["reality"].append(0.0 if Xm is None else reality_defect_z(mu, Xp, Xm))
        rec["imag"].append(float(np.max(np.abs(np.imag(Xp)))))

    record(0.0, stepper.y)
    for k in range(1, steps + 1):
        y, c = stepper.trial(ds)
        if not np.all(np.isfinite(y)):
            raise FloatingPointError(f"lattice flow diverged near s = {k * ds:.6g}")
        stepper.accept(y, c)
        if k % record_every == 0 or k == steps:
            record(k * ds, stepper.y)
    Xm = None if path == "real" else np.array(rec["Xm"])
    return LatticeRun(np.array(rec["s"]), np.array(rec["Xp"]), np.array(rec["psi"]),
                      np.array(rec["mass"]), np.array(rec["seam"]), np.array(rec["reality"]),
                      np.array(rec["imag"]), Xm)
