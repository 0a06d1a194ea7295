"""Finite windows of bi-infinite paths, cylinders, segments and the Parry measure.

A path ``x`` has coordinates ``x_n`` (edge ids) with ``F(x_{n+1}) == I(x_n)``.
Only a finite window ``x_lo .. x_hi`` is ever stored.  The cylinder with base
``n`` and word ``e_1 .. e_k`` is ``{x_{n+1} = e_1, ..., x_{n+k} = e_k}``; the
plus segment of level ``n`` fixes every ``x_t`` with ``t >= n`` and the minus
segment fixes every ``x_t`` with ``t <= n``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .graph_core import OrientedGraph, enumerate_words
from .spectral import SpectralData


class WindowTooShort(ValueError):
    """The stored window does not cover the coordinates an operation needs."""


@dataclass(frozen=True)
class PathWindow:
    lo: int
    hi: int
    edges: tuple[int, ...]

    def __post_init__(self):
        edges = tuple(int(e) for e in self.edges)
        object.__setattr__(self, "edges", edges)
        if self.hi < self.lo or len(edges) != self.hi - self.lo + 1:
            raise ValueError("window length must equal hi - lo + 1")

    @classmethod
    def from_edges(cls, lo: int, edges) -> "PathWindow":
        edges = tuple(edges)
        return cls(lo, lo + len(edges) - 1, edges)

    def covers(self, a: int, b: int | None = None) -> bool:
        b = a if b is None else b
        return self.lo <= a and b <= self.hi

    def require(self, a: int, b: int | None = None):
        if not self.covers(a, b):
            b = a if b is None else b
            raise WindowTooShort(f"window [{self.lo},{self.hi}] does not cover [{a},{b}]")

    def x(self, n: int) -> int:
        self.require(n)
        return self.edges[n - self.lo]

    def word(self, a: int, b: int) -> tuple[int, ...]:
        """Coordinates ``x_a .. x_b`` in increasing index order."""
        self.require(a, b)
        return self.edges[a - self.lo:b - self.lo + 1]

    def is_admissible(self, g: OrientedGraph) -> bool:
        return g.is_admissible(self.edges)

    def shifted(self, k: int = 1) -> "PathWindow":
        """Window of ``sigma^k x``: ``(sigma x)_n = x_{n+1}``."""
        return PathWindow(self.lo - k, self.hi - k, self.edges)

    def with_edges(self, lo: int, edges) -> "PathWindow":
        """Replace coordinates starting at index ``lo``; the window may grow."""
        edges = tuple(edges)
        new_lo = min(self.lo, lo)
        new_hi = max(self.hi, lo + len(edges) - 1)
        cur = {n: self.edges[n - self.lo] for n in range(self.lo, self.hi + 1)}
        cur.update({lo + i: e for i, e in enumerate(edges)})
        missing = [n for n in range(new_lo, new_hi + 1) if n not in cur]
        if missing:
            raise ValueError(f"gap in window at index {missing[0]}")
        return PathWindow(new_lo, new_hi, tuple(cur[n] for n in range(new_lo, new_hi + 1)))

    def to_dict(self) -> dict:
        return {"lo": self.lo, "hi": self.hi, "edges": list(self.edges)}

    @classmethod
    def from_dict(cls, d: dict) -> "PathWindow":
        return cls(int(d["lo"]), int(d["hi"]), tuple(d["edges"]))


@dataclass(frozen=True)
class Cylinder:
    n: int
    word: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "word", tuple(int(e) for e in self.word))
        if not self.word:
            raise ValueError("cylinder word must be nonempty")

    @property
    def k(self) -> int:
        return len(self.word)

    def contains(self, x: PathWindow) -> bool:
        x.require(self.n + 1, self.n + self.k)
        return x.word(self.n + 1, self.n + self.k) == self.word

    def witness(self) -> PathWindow:
        return PathWindow.from_edges(self.n + 1, self.word)

    def to_dict(self) -> dict:
        return {"n": self.n, "word": list(self.word)}

    @classmethod
    def from_dict(cls, d: dict) -> "Cylinder":
        return cls(int(d["n"]), tuple(d["word"]))


@dataclass(frozen=True)
class PlusSegment:
    """``gamma^+_n(x)``: all paths agreeing with ``x`` at indices ``>= n``."""

    n: int
    anchor: PathWindow

    def __post_init__(self):
        self.anchor.require(self.n)

    def vertex(self, g: OrientedGraph) -> int:
        """``F(x_n)``, the only datum its Parry conditional measure depends on."""
        return int(g.F[self.anchor.x(self.n)])


@dataclass(frozen=True)
class MinusSegment:
    """``gamma^-_n(x)``: all paths agreeing with ``x`` at indices ``<= n``."""

    n: int
    anchor: PathWindow

    def __post_init__(self):
        self.anchor.require(self.n)

    def vertex(self, g: OrientedGraph) -> int:
        """``I(x_n)``."""
        return int(g.I[self.anchor.x(self.n)])


def parry_measure(c: Cylinder, sd: SpectralData, g: OrientedGraph) -> float:
    """``nu(C) = la_{I(e_k)} h_{F(e_1)} exp(-k theta_1)``."""
    if not g.is_admissible(c.word):
        raise ValueError("cylinder word is not admissible")
    return float(sd.la[g.I[c.word[-1]]] * sd.h[g.F[c.word[0]]] * math.exp(-c.k * sd.theta1))


def phi1_plus(seg: PlusSegment, sd: SpectralData, g: OrientedGraph) -> float:
    """``h_{F(x_n)} exp((n-1) theta_1)``."""
    return float(sd.h[seg.vertex(g)] * math.exp((seg.n - 1) * sd.theta1))


def phi1_minus(seg: MinusSegment, sd: SpectralData, g: OrientedGraph) -> float:
    """``la_{I(x_n)} exp(-n theta_1)``."""
    return float(sd.la[seg.vertex(g)] * math.exp(-seg.n * sd.theta1))


def conditional_product_check(c: Cylinder, x: PathWindow, sd: SpectralData,
                              g: OrientedGraph) -> tuple[float, float]:
    """``(nu(C), Phi1+(leaf+ of x in C) * Phi1-(leaf- of x in C))``.

    Inside ``C`` the plus leaf through ``x`` is ``gamma^+_{n+1}(x)`` and the
    minus leaf is ``gamma^-_{n+k}(x)``.
    """
    if not c.contains(x):
        raise ValueError("witness is not in the cylinder")
    lhs = parry_measure(c, sd, g)
    rhs = phi1_plus(PlusSegment(c.n + 1, x), sd, g) * phi1_minus(MinusSegment(c.n + c.k, x), sd, g)
    return lhs, rhs


def plus_subcells(seg: PlusSegment, g: OrientedGraph) -> list[PlusSegment]:
    """Level ``n-1`` cells inside ``gamma^+_n``, split by ``x_{n-1}``."""
    a = seg.anchor
    a.require(seg.n, a.hi)
    top = a.word(seg.n, a.hi)
    v = int(g.F[top[0]])
    return [PlusSegment(seg.n - 1, PathWindow.from_edges(seg.n - 1, (e,) + top)) for e in g.out_edges(v)]


def minus_subcells(seg: MinusSegment, g: OrientedGraph) -> list[MinusSegment]:
    """Level ``n+1`` minus cells inside ``gamma^-_n``, split by ``x_{n+1}``."""
    a = seg.anchor
    bottom = a.word(a.lo, seg.n)
    v = int(g.I[bottom[-1]])
    return [MinusSegment(seg.n + 1, PathWindow.from_edges(a.lo, bottom + (e,))) for e in g.in_edges(v)]


def cylinders(g: OrientedGraph, k: int, n: int = 0) -> list[Cylinder]:
    return [Cylinder(n, w) for w in enumerate_words(g, k)]


# ---------------------------------------------------------------------------
# sampling


def _choose(rng: np.random.Generator, weights) -> int:
    w = np.asarray(weights, dtype=float)
    c = np.cumsum(w)
    return int(np.searchsorted(c, rng.random() * c[-1], side="right"))


def sample_parry(g: OrientedGraph, sd: SpectralData, window: tuple[int, int],
                 rng: np.random.Generator | int | None = None) -> PathWindow:
    """Exact draw of ``x_lo .. x_hi`` from the Parry measure.

    ``I(x_hi)`` is drawn with weights ``la_i h_i``, then each coordinate going
    down is drawn among edges with the prescribed ``I`` with probability
    ``h_{F(e)} exp(-theta_1) / h_{I(e)}``.
    """
    rng = np.random.default_rng(rng)
    lo, hi = window
    if hi < lo:
        raise ValueError("empty window")
    out = [g.out_edges(v) for v in range(g.m)]
    scale = math.exp(-sd.theta1)
    v = _choose(rng, sd.la * sd.h)
    word = []
    for _ in range(hi - lo + 1):
        cand = out[v]
        e = cand[_choose(rng, [sd.h[g.F[c]] * scale / sd.h[v] for c in cand])]
        word.append(e)
        v = int(g.F[e])
    return PathWindow(lo, hi, tuple(reversed(word)))


def extend_up(w: PathWindow, g: OrientedGraph, sd: SpectralData, k: int,
              rng: np.random.Generator) -> PathWindow:
    """Append ``x_{hi+1} .. x_{hi+k}`` from the Parry conditional law.

    ``P(x_{n+1} = e | x_n) = la_{I(e)} exp(-theta_1) / la_{I(x_n)}`` over edges
    with ``F(e) = I(x_n)``.
    """
    edges = list(w.edges)
    for _ in range(k):
        v = int(g.I[edges[-1]])
        cand = g.in_edges(v)
        edges.append(cand[_choose(rng, [sd.la[g.I[c]] for c in cand])])
    return PathWindow(w.lo, w.hi + k, tuple(edges))


def extend_down(w: PathWindow, g: OrientedGraph, sd: SpectralData, k: int,
                rng: np.random.Generator) -> PathWindow:
    """Prepend ``x_{lo-k} .. x_{lo-1}`` from the Parry conditional law."""
    edges = list(w.edges)
    for _ in range(k):
        v = int(g.F[edges[0]])
        cand = g.out_edges(v)
        edges.insert(0, cand[_choose(rng, [sd.h[g.F[c]] for c in cand])])
    return PathWindow(w.lo - k, w.hi, tuple(edges))
