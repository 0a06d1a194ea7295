"""Cylinder observables, their cell integrals and the map f -> Phi_f^+.

An observable is a constant plus a finite combination of indicators of
cylinders ``{x_1 = e_1, ..., x_k = e_k}``.  It is constant on level-1 cells,
and its integral over a level ``n`` plus cell (against ``Phi_1^+``) depends
only on ``F(x_n)`` once ``n > depth``; that makes the approximating measure of
the deviation theory exact rather than asymptotic.
"""
from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from .additive_measures import (MinusMeasure, PlusMeasure, minus_basis, plus_basis, power_apply,
                                second_measures)
from .graph_core import DEFAULT_WORD_CAP, OrientedGraph, enumerate_words
from .spectral import NoisyVectorSequence, SpectralData, recover_expanding_vector


class TailNotDecaying(ValueError):
    pass


class DegenerateObservable(ValueError):
    """The observable has no component along the second measure."""


@dataclass(frozen=True)
class CylinderObservable:
    """``constant + sum coeff * 1[x_1..x_k = word]``; words may have different lengths."""

    terms: tuple[tuple[tuple[int, ...], complex], ...] = ()
    constant: complex = 0.0
    name: str = ""
    _index: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        merged = defaultdict(complex)
        for word, coeff in self.terms:
            word = tuple(int(e) for e in word)
            if not word:
                raise ValueError("empty word; use the constant term")
            merged[word] += complex(coeff)
        terms = tuple(sorted((w, c) for w, c in merged.items() if c != 0))
        object.__setattr__(self, "terms", terms)
        object.__setattr__(self, "constant", complex(self.constant))

    @classmethod
    def indicator(cls, word, coeff=1.0, name="") -> "CylinderObservable":
        return cls(((tuple(word), coeff),), 0.0, name)

    @classmethod
    def const(cls, c=1.0, name="") -> "CylinderObservable":
        return cls((), c, name)

    @property
    def depth(self) -> int:
        return max((len(w) for w, _ in self.terms), default=0)

    @property
    def is_real(self) -> bool:
        return self.constant.imag == 0 and all(c.imag == 0 for _, c in self.terms)

    def value(self, x_word) -> complex:
        """``f`` on any path whose coordinates ``x_1, x_2, ...`` start with ``x_word``."""
        x_word = tuple(x_word)
        total = self.constant
        for w, c in self.terms:
            if x_word[:len(w)] == w:
                total += c
        return total

    def __add__(self, other: "CylinderObservable") -> "CylinderObservable":
        return CylinderObservable(self.terms + other.terms, self.constant + other.constant)

    def scale(self, a) -> "CylinderObservable":
        return CylinderObservable(tuple((w, a * c) for w, c in self.terms), a * self.constant, self.name)

    def refine(self, g: OrientedGraph, d: int | None = None,
               cap: int = DEFAULT_WORD_CAP) -> "CylinderObservable":
        """Same function written with words of uniform length ``d`` and no constant."""
        d = self.depth if d is None else d
        if d < self.depth:
            raise ValueError("cannot refine below the current depth")
        if d == 0:
            return self
        terms = [(w, self.value(w)) for w in enumerate_words(g, d, cap=cap)]
        return CylinderObservable(tuple((w, c) for w, c in terms if c != 0), 0.0, self.name)

    def to_dict(self) -> dict:
        return {
            "depth": self.depth,
            "terms": [{"word": list(w), "coeff": [c.real, c.imag]} for w, c in self.terms],
            "constant": [self.constant.real, self.constant.imag],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CylinderObservable":
        def cplx(z):
            if isinstance(z, (list, tuple)):
                return complex(z[0], z[1])
            return complex(z)
        terms = tuple((tuple(t["word"]), cplx(t.get("coeff", 1.0))) for t in d.get("terms", []))
        obs = cls(terms, cplx(d.get("constant", 0.0)), d.get("name", ""))
        if "depth" in d and int(d["depth"]) < obs.depth:
            raise ValueError("declared depth is smaller than the longest word")
        return obs


def check_observable(f: CylinderObservable, g: OrientedGraph):
    for w, _ in f.terms:
        if not g.is_admissible(w):
            raise ValueError(f"word {list(w)} is not admissible")


def mean_zero(f: CylinderObservable, sd: SpectralData, g: OrientedGraph) -> CylinderObservable:
    """``f - integral f dnu``."""
    return CylinderObservable(f.terms, f.constant - integral_against(f, MinusMeasure(sd.la, sd, check=False), sd, g),
                              f.name)


# ---------------------------------------------------------------------------
# cell integrals


def level_cell_integrals(f: CylinderObservable, sd: SpectralData, g: OrientedGraph) -> list[dict]:
    """Integrals over level ``n`` cells for ``n = 1..depth``, keyed by ``(x_n, ..., x_d)``."""
    check_observable(f, g)
    d = f.depth
    if d == 0:
        return []
    tables = [{w: f.value(w) * sd.h[g.F[w[0]]] for w in enumerate_words(g, d)}]
    for _ in range(1, d):
        nxt = defaultdict(complex)
        for w, val in tables[-1].items():
            nxt[w[1:]] += val
        tables.append(dict(nxt))
    return tables


def base_cell_integrals(f: CylinderObservable, sd: SpectralData, g: OrientedGraph) -> np.ndarray:
    """``V(d+1)``: integral over the level ``d+1`` cell with ``F(x_{d+1}) = i``."""
    check_observable(f, g)
    d = f.depth
    V = np.zeros(g.m, dtype=complex)
    if d == 0:
        return f.constant * sd.h.astype(complex)
    for w in enumerate_words(g, d):
        V[g.I[w[-1]]] += f.value(w) * sd.h[g.F[w[0]]]
    return V


def cell_integral_table(f: CylinderObservable, sd: SpectralData, g: OrientedGraph, n_max: int) -> dict:
    """``{n: V(n)}`` for ``d+1 <= n <= n_max`` using ``V(n+1) = Q V(n)``."""
    d = f.depth
    out = {d + 1: base_cell_integrals(f, sd, g)}
    for n in range(d + 2, n_max + 1):
        out[n] = sd.Q @ out[n - 1]
    return out


# ---------------------------------------------------------------------------
# Phi_f^+


def xi_plus_vector(f: CylinderObservable, sd: SpectralData, g: OrientedGraph) -> np.ndarray:
    """Vector ``w`` with ``Phi_f^+ = Phi^+_w``, term by term.

    A word of length ``k`` contributes ``coeff h_{F(e_1)} Q^{-k} P^+ e_{I(e_k)}``;
    the constant contributes ``constant * h``.
    """
    check_observable(f, g)
    w = f.constant * sd.h.astype(complex)
    by_len = defaultdict(lambda: np.zeros(g.m, dtype=complex))
    for word, c in f.terms:
        by_len[len(word)][g.I[word[-1]]] += c * sd.h[g.F[word[0]]]
    for k, V in by_len.items():
        w = w + power_apply(sd, sd.P_plus @ V, -k)
    return w


def xi_plus(f: CylinderObservable, sd: SpectralData, g: OrientedGraph) -> PlusMeasure:
    return PlusMeasure(xi_plus_vector(f, sd, g), sd, check=False)


def xi_plus_by_projection(f: CylinderObservable, sd: SpectralData, g: OrientedGraph) -> np.ndarray:
    """``Q^{-d} P^+ V(d+1)`` from the enumerated cell table."""
    return power_apply(sd, sd.P_plus @ base_cell_integrals(f, sd, g), -f.depth)


def xi_plus_by_duality(f: CylinderObservable, sd: SpectralData, g: OrientedGraph) -> np.ndarray:
    """``sum_i m_{Phi^-(i)}(f) v_i`` over the Jordan basis and its dual."""
    w = np.zeros(g.m, dtype=complex)
    for p, mi in zip(plus_basis(sd), minus_basis(sd)):
        w = w + integral_against(f, mi, sd, g) * p.v
    return w


def integral_against(f: CylinderObservable, mi: MinusMeasure, sd: SpectralData, g: OrientedGraph,
                     n: int | None = None) -> complex:
    """``m_{Phi^-}(f) = sum_i V(n)_i (vt^{(1-n)})_i``; exact for every ``n > depth``."""
    d = f.depth
    n = d + 1 if n is None else n
    if n < d + 1:
        raise ValueError("evaluation level must exceed the observable depth")
    V = cell_integral_table(f, sd, g, n)[n]
    vt = power_apply(sd, mi.vt, 1 - n, transpose=True) if n > 1 else mi.vt
    return complex(np.sum(V * vt))


def integral_tail(f: CylinderObservable, mi: MinusMeasure, sd: SpectralData, g: OrientedGraph,
                  n_values) -> list[complex]:
    """Finite-level values of the defining sum; constant in ``n`` for these observables."""
    return [integral_against(f, mi, sd, g, n) for n in n_values]


def alpha(f: CylinderObservable, sd: SpectralData, g: OrientedGraph) -> complex:
    """Coefficient of ``Phi_2^+`` in ``Phi_f^+``: ``m_{Phi_2^-}(f)``."""
    _, m2 = second_measures(sd)
    return integral_against(f, m2, sd, g)


def weak_lipschitz_norm(f: CylinderObservable, sd: SpectralData, g: OrientedGraph) -> float:
    """``sup |f| + C_f`` with ``C_f`` the largest gap between same-vertex cell integrals.

    Levels ``0..depth`` are compared; above the depth the integral depends
    only on ``F(x_n)`` and the gap is zero.
    """
    check_observable(f, g)
    d = f.depth
    if d == 0:
        return abs(f.constant)
    sup = max(abs(f.value(w)) for w in enumerate_words(g, d))
    groups = defaultdict(list)
    scale0 = math.exp(-sd.theta1)
    for w in enumerate_words(g, d + 1):      # (x_0, x_1, ..., x_d)
        groups[(0, int(g.F[w[0]]))].append(f.value(w[1:]) * sd.h[g.F[w[0]]] * scale0)
    for n, table in enumerate(level_cell_integrals(f, sd, g), start=1):
        for key, val in table.items():
            groups[(n, int(g.F[key[0]]))].append(val)
    gap = 0.0
    for vals in groups.values():
        vals = np.asarray(vals)
        gap = max(gap, float(np.max(np.abs(vals[:, None] - vals[None, :]))))
    return sup + gap


def shift_observable(f: CylinderObservable, g: OrientedGraph) -> CylinderObservable:
    """``f o sigma``: a word ``w`` on ``x_1..`` becomes ``(e, w)`` for every admissible ``e``."""
    terms = []
    for w, c in f.terms:
        for e in g.out_edges(int(g.F[w[0]])):
            terms.append(((e,) + w, c))
    return CylinderObservable(tuple(terms), f.constant)


def theta_measure_from_table(sd: SpectralData, table, delta: float, base_level: int = 1):
    """General approximation path: a noisy table ``V(n)`` -> measure and certificate.

    ``table[j]`` is the cell-integral vector at level ``base_level + j`` and
    ``|Q V(n) - V(n+1)| <= delta``.  Returns the measure whose level vectors
    shadow the table, together with the shadowing certificate.
    """
    V = np.asarray(table, dtype=complex)
    rec = recover_expanding_vector(sd.Q.astype(float), NoisyVectorSequence(V, delta))
    w = power_apply(sd, sd.P_plus @ rec.v, 1 - base_level)
    return PlusMeasure(w, sd, check=False), rec
