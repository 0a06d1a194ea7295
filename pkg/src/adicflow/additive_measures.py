"""Finitely-additive measures on plus and minus segments, pairings and products.

``Phi^+_v`` gives the level ``n+1`` plus segment the value ``(Q^n v)_{F(x_{n+1})}``
and ``Phi^-_vt`` gives the level ``n`` minus segment ``((Q^t)^{-n} vt)_{I(x_n)}``.
Negative powers are taken on the expanding spaces, where ``Q`` is invertible.
"""
from __future__ import annotations

import numpy as np

from .compactum import Cylinder, MinusSegment, PathWindow, PlusSegment
from .graph_core import OrientedGraph, enumerate_words
from .spectral import SpectralData, l1


class NegativePowerOutsideEplus(ValueError):
    """Negative powers of ``Q`` are only defined here on the expanding space."""


def _cvec(a) -> list:
    return [[float(z.real), float(z.imag)] for z in np.ravel(a)]


def _from_cvec(rows) -> np.ndarray:
    return np.array([complex(r[0], r[1]) if isinstance(r, (list, tuple)) else complex(r) for r in rows])


def power_apply(sd: SpectralData, v, n: int, transpose: bool = False) -> np.ndarray:
    """``Q^n v`` (or ``(Q^t)^n v``); negative ``n`` requires ``v`` in the expanding space."""
    v = np.asarray(v, dtype=complex)
    if n >= 0:
        M = sd.Q.T if transpose else sd.Q
        out = v.copy()
        for _ in range(n):
            out = M @ out
        return out
    if transpose:
        if not sd.in_plus_t(v):
            raise NegativePowerOutsideEplus("vector is not in the expanding space of Q^t")
        return sd.power_plus_t(v, n)
    if not sd.in_plus(v):
        raise NegativePowerOutsideEplus("vector is not in the expanding space of Q")
    return sd.power_plus(v, n)


class PlusMeasure:
    """``Phi^+_v`` for ``v`` in the expanding space of ``Q``."""

    kind = "plus"

    def __init__(self, v, sd: SpectralData, check: bool = True):
        self.v = np.asarray(v, dtype=complex)
        self.sd = sd
        if check and not sd.in_plus(self.v):
            raise NegativePowerOutsideEplus("vector is not in the expanding space of Q")

    def level_vector(self, level: int) -> np.ndarray:
        """Values on level ``level`` plus segments, indexed by ``F(x_level)``."""
        return power_apply(self.sd, self.v, level - 1)

    def to_dict(self) -> dict:
        return {"kind": "plus", "vector": _cvec(self.v)}

    @classmethod
    def from_dict(cls, d: dict, sd: SpectralData) -> "PlusMeasure":
        if d.get("kind") != "plus":
            raise ValueError("not a plus measure")
        return cls(_from_cvec(d["vector"]), sd)

    def __repr__(self):
        return f"PlusMeasure({np.round(self.v, 6)})"


class MinusMeasure:
    """``Phi^-_vt`` for ``vt`` in the expanding space of ``Q^t``."""

    kind = "minus"

    def __init__(self, vt, sd: SpectralData, check: bool = True):
        self.vt = np.asarray(vt, dtype=complex)
        self.sd = sd
        if check and not sd.in_plus_t(self.vt):
            raise NegativePowerOutsideEplus("vector is not in the expanding space of Q^t")

    def level_vector(self, level: int) -> np.ndarray:
        """Values on level ``level`` minus segments, indexed by ``I(x_level)``."""
        return power_apply(self.sd, self.vt, -level, transpose=True)

    def to_dict(self) -> dict:
        return {"kind": "minus", "vector": _cvec(self.vt)}

    @classmethod
    def from_dict(cls, d: dict, sd: SpectralData) -> "MinusMeasure":
        if d.get("kind") != "minus":
            raise ValueError("not a minus measure")
        return cls(_from_cvec(d["vector"]), sd)

    def __repr__(self):
        return f"MinusMeasure({np.round(self.vt, 6)})"


def plus_basis(sd: SpectralData) -> list[PlusMeasure]:
    """Measures of the Jordan basis of the expanding space (unit l1 norm)."""
    return [PlusMeasure(sd.E_plus_basis[:, j], sd, check=False) for j in range(sd.dim_plus)]


def minus_basis(sd: SpectralData) -> list[MinusMeasure]:
    """The dual basis with respect to the pairing."""
    return [MinusMeasure(sd.Et_plus_basis[:, j], sd, check=False) for j in range(sd.dim_plus)]


def phi1_plus_measure(sd: SpectralData) -> PlusMeasure:
    return PlusMeasure(sd.h, sd, check=False)


def phi1_minus_measure(sd: SpectralData) -> MinusMeasure:
    return MinusMeasure(sd.la, sd, check=False)


def second_measures(sd: SpectralData) -> tuple[PlusMeasure, MinusMeasure]:
    """``(Phi_2^+, Phi_2^-)`` with ``|v_2| = 1`` and ``sum v_2 vt_2 = 1``."""
    if sd.v2 is None:
        raise ValueError("no simple real second eigenvalue > 1")
    return PlusMeasure(sd.v2, sd, check=False), MinusMeasure(sd.vt2, sd, check=False)


def eval_plus(mu: PlusMeasure, seg: PlusSegment, g: OrientedGraph) -> complex:
    """Value on ``gamma^+_{n+1}``: ``(Q^n v)_{F(x_{n+1})}``."""
    return complex(mu.level_vector(seg.n)[seg.vertex(g)])


def eval_minus(mu: MinusMeasure, seg: MinusSegment, g: OrientedGraph) -> complex:
    """Value on ``gamma^-_n``: ``((Q^t)^{-n} vt)_{I(x_n)}``."""
    return complex(mu.level_vector(seg.n)[seg.vertex(g)])


def pairing(p: PlusMeasure, mi: MinusMeasure) -> complex:
    """Bilinear (not Hermitian) pairing ``sum v_i vt_i``."""
    return complex(np.sum(p.v * mi.vt))


class ProductMeasure:
    def __init__(self, plus: PlusMeasure, minus: MinusMeasure):
        self.plus = plus
        self.minus = minus

    def closed_form(self, c: Cylinder, g: OrientedGraph) -> complex:
        """``(v^{(n)})_{F(e_1)} (vt^{(-n-k)})_{I(e_k)}`` for the cylinder at base ``n``."""
        a = self.plus.level_vector(c.n + 1)[g.F[c.word[0]]]
        b = self.minus.level_vector(c.n + c.k)[g.I[c.word[-1]]]
        return complex(a * b)


def eval_product(pm: ProductMeasure, c: Cylinder, witness: PathWindow, g: OrientedGraph) -> complex:
    """Product of the leaf measures of the leaves through ``witness`` inside ``C``."""
    if not c.contains(witness):
        raise ValueError("witness is not in the cylinder")
    a = eval_plus(pm.plus, PlusSegment(c.n + 1, witness), g)
    b = eval_minus(pm.minus, MinusSegment(c.n + c.k, witness), g)
    return a * b


def pairing_by_cells(p: PlusMeasure, mi: MinusMeasure, g: OrientedGraph, n: int = 0, k: int = 1) -> complex:
    """Total product mass of the space, summed over all cylinders of length ``k`` at base ``n``."""
    pm = ProductMeasure(p, mi)
    return complex(sum(pm.closed_form(Cylinder(n, w), g) for w in enumerate_words(g, k)))


def gram_matrix(sd: SpectralData) -> np.ndarray:
    P, M = plus_basis(sd), minus_basis(sd)
    return np.array([[pairing(a, b) for b in M] for a in P])


def shift_equivariance_check(mu: PlusMeasure, g: OrientedGraph, levels=range(-1, 4)) -> float:
    """Largest discrepancy between the pushed measure and the measure of ``Q^{-1} v``.

    The push of ``Phi_v`` by the shift evaluates ``Phi_v`` on the shifted
    segment; it must equal ``Phi_{Q^{-1} v}`` on the original one.  For an
    eigenvector with eigenvalue ``exp(theta)`` this is ``exp(-theta) Phi_v``.
    """
    if l1(mu.v) == 0:
        return 0.0
    pulled = PlusMeasure(power_apply(mu.sd, mu.v, -1), mu.sd, check=False)
    worst = 0.0
    for n in levels:
        for w in enumerate_words(g, 2):
            x = PathWindow.from_edges(n, w)
            lhs = eval_plus(mu, PlusSegment(n - 1, x.shifted(1)), g)
            rhs = eval_plus(pulled, PlusSegment(n, x), g)
            worst = max(worst, abs(lhs - rhs))
    return worst
