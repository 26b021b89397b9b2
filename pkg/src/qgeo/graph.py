"""Directed graphs and their first-order differential calculus.

Functions on vertices, 1-forms and 2-tensors are stored as plain complex
numpy arrays indexed by the graph's canonical orderings:

* vertex functions by vertex ``0..n-1``
* 1-forms by ``graph.arrows`` (sorted source-major, then target)
* 2-tensors in Omega^1 (x)_A Omega^1 by ``graph.paths2``, the sorted list of
  directed length-2 paths ``(x, y, z)`` (``z == x`` allowed)
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property

import numpy as np

TOL = 1e-12


class GraphError(ValueError):
    pass


@dataclass(frozen=True)
class DirectedGraph:
    n: int
    arrows: tuple[tuple[int, int], ...]

    def __post_init__(self):
        if self.n < 1:
            raise GraphError("graph needs at least one vertex")
        arrows = tuple(sorted((int(x), int(y)) for x, y in self.arrows))
        if len(set(arrows)) != len(arrows):
            raise GraphError("duplicate arrows")
        for x, y in arrows:
            if x == y:
                raise GraphError(f"self-arrow at vertex {x}")
            if not (0 <= x < self.n and 0 <= y < self.n):
                raise GraphError(f"arrow {x}->{y} out of range")
        object.__setattr__(self, "arrows", arrows)

    # -- constructors ---------------------------------------------------
    @classmethod
    def from_edges(cls, n, edges):
        """Bidirected graph with both directions of every undirected edge."""
        arrows = set()
        for x, y in edges:
            arrows.add((x, y))
            arrows.add((y, x))
        return cls(n, tuple(arrows))

    @classmethod
    def star(cls, legs: int):
        return cls.from_edges(legs + 1, [(0, i) for i in range(1, legs + 1)])

    @classmethod
    def cycle(cls, n: int):
        return cls.from_edges(n, [(i, (i + 1) % n) for i in range(n)])

    @classmethod
    def complete(cls, n: int):
        return cls.from_edges(n, [(i, j) for i in range(n) for j in range(i + 1, n)])

    @classmethod
    def from_json(cls, data):
        if isinstance(data, str):
            data = json.loads(data)
        return cls(int(data["vertices"]), tuple(tuple(a) for a in data["arrows"]))

    def to_json(self):
        return {"vertices": self.n, "arrows": [list(a) for a in self.arrows]}

    # -- indexing -------------------------------------------------------
    @property
    def n_arrows(self) -> int:
        return len(self.arrows)

    @cached_property
    def index(self) -> dict[tuple[int, int], int]:
        return {a: k for k, a in enumerate(self.arrows)}

    @cached_property
    def src(self) -> np.ndarray:
        return np.array([a[0] for a in self.arrows], dtype=int)

    @cached_property
    def dst(self) -> np.ndarray:
        return np.array([a[1] for a in self.arrows], dtype=int)

    def has(self, x, y) -> bool:
        return (x, y) in self.index

    @cached_property
    def bidirected(self) -> bool:
        return all((y, x) in self.index for x, y in self.arrows)

    @cached_property
    def reverse(self) -> np.ndarray:
        """Index of the reversed arrow, -1 where it does not exist."""
        return np.array([self.index.get((y, x), -1) for x, y in self.arrows], dtype=int)

    @cached_property
    def successors(self) -> tuple[tuple[int, ...], ...]:
        out = [[] for _ in range(self.n)]
        for x, y in self.arrows:
            out[x].append(y)
        return tuple(tuple(v) for v in out)

    @cached_property
    def predecessors(self) -> tuple[tuple[int, ...], ...]:
        inc = [[] for _ in range(self.n)]
        for x, y in self.arrows:
            inc[y].append(x)
        return tuple(tuple(sorted(v)) for v in inc)

    @cached_property
    def paths2(self) -> tuple[tuple[int, int, int], ...]:
        return tuple((x, y, z) for x, y in self.arrows for z in self.successors[y])

    @cached_property
    def path_index(self) -> dict[tuple[int, int, int], int]:
        return {p: k for k, p in enumerate(self.paths2)}

    @cached_property
    def paths3(self) -> tuple[tuple[int, int, int, int], ...]:
        return tuple((x, y, z, w) for x, y, z in self.paths2 for w in self.successors[z])

    @cached_property
    def blocks(self) -> dict[tuple[int, int], np.ndarray]:
        """Path indices grouped by endpoint pair (x, z)."""
        groups: dict[tuple[int, int], list[int]] = {}
        for k, (x, _, z) in enumerate(self.paths2):
            groups.setdefault((x, z), []).append(k)
        return {key: np.array(v, dtype=int) for key, v in groups.items()}

    @cached_property
    def _block_ids(self):
        ids = np.empty(len(self.paths2), dtype=int)
        counts = []
        for b, idx in enumerate(self.blocks.values()):
            ids[idx] = b
            counts.append(len(idx))
        return ids, np.array(counts, dtype=float)

    @cached_property
    def reversed_paths(self) -> np.ndarray:
        """Index of (z, y, x) for each path (x, y, z); needs a bidirected graph."""
        pi = self.path_index
        return np.array([pi[(z, y, x)] for x, y, z in self.paths2], dtype=int)

    @cached_property
    def forks(self) -> tuple[tuple[int, int, int], ...]:
        """Triples (z, y, s) with z->y and z->s: basis chi_{y<-z} (x) omega_{z->s}."""
        return tuple((z, y, s) for z in range(self.n)
                     for y in self.successors[z] for s in self.successors[z])

    @cached_property
    def fork_index(self) -> dict[tuple[int, int, int], int]:
        return {f: k for k, f in enumerate(self.forks)}

    # -- convenience ----------------------------------------------------
    def basis_oneform(self, x, y) -> np.ndarray:
        w = np.zeros(self.n_arrows, dtype=complex)
        w[self.index[(x, y)]] = 1.0
        return w

    def delta(self, x) -> np.ndarray:
        f = np.zeros(self.n, dtype=complex)
        f[x] = 1.0
        return f


def differential(g: DirectedGraph, f) -> np.ndarray:
    f = np.asarray(f, dtype=complex)
    return f[g.dst] - f[g.src]


def bimodule_act(g: DirectedGraph, f, w, side: str = "left") -> np.ndarray:
    f = np.asarray(f, dtype=complex)
    if side == "left":
        return f[g.src] * w
    if side == "right":
        return w * f[g.dst]
    raise ValueError(f"side must be 'left' or 'right', not {side!r}")


def theta(g: DirectedGraph) -> np.ndarray:
    return np.ones(g.n_arrows, dtype=complex)


def star_oneform(g: DirectedGraph, w) -> np.ndarray:
    if not g.bidirected:
        raise GraphError("the *-operation needs a bidirected graph")
    return -np.conj(np.asarray(w, dtype=complex)[g.reverse])


def tensor(g: DirectedGraph, w, v) -> np.ndarray:
    """w (x)_A v for two 1-forms, as a 2-tensor over paths2."""
    w = np.asarray(w, dtype=complex)
    v = np.asarray(v, dtype=complex)
    idx = g.index
    return np.array([w[idx[(x, y)]] * v[idx[(y, z)]] for x, y, z in g.paths2], dtype=complex)


def act2(g: DirectedGraph, f, T, side: str = "left") -> np.ndarray:
    """Left or right action of a vertex function on a 2-tensor."""
    f = np.asarray(f, dtype=complex)
    col = 0 if side == "left" else 2
    ends = np.array([p[col] for p in g.paths2], dtype=int)
    return f[ends] * T


def dagger(g: DirectedGraph, T) -> np.ndarray:
    """flip(* (x) *) on 2-tensors: coefficient of (z,y,x) is conj of (x,y,z)."""
    T = np.asarray(T, dtype=complex)
    out = np.empty_like(T)
    out[g.reversed_paths] = np.conj(T)
    return out


def wedge_project(g: DirectedGraph, T) -> np.ndarray:
    """Image of T in the minimal 2-forms: per endpoint block, remove the mean."""
    T = np.asarray(T, dtype=complex)
    ids, counts = g._block_ids
    if len(T) == 0:
        return T.copy()
    mean = (np.bincount(ids, T.real, len(counts)) + 1j * np.bincount(ids, T.imag, len(counts))) / counts
    return T - mean[ids]


def max_abs(a) -> float:
    a = np.asarray(a)
    return float(np.max(np.abs(a))) if a.size else 0.0
