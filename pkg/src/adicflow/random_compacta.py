"""Markov compacta over random graph sequences.

A sequence ``omega`` assigns a graph to every level ``n``; the edge ``x_n`` of
a path is an edge of ``omega_n``.  Masses obey ``M(l+1) = A(omega_l) M(l)``,
and transverse weights ``Lam(n) = A(omega_{n+1})^t Lam(n+1)``.  The renormalisation
cocycle is ``AA(n) = A(omega_n) ... A(omega_1)`` with ``AA(-1) = A(omega_0)^{-1}``;
its transpose runs over the inverse shift, ``AAt(1) = A(omega_0)^t`` and
``AAt(-1) = (A(omega_1)^t)^{-1}``.

Oseledets data are computed from QR-orthonormalised frames: frames pushed
forward from far in the past give the unstable flag at every level, frames
pulled back from far in the future with transposes give the dual flag.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
import sympy
from scipy.linalg import subspace_angles

from .adic_flow import AdicFlow, FlowState
from .compactum import PathWindow
from .graph_core import OrientedGraph, graph_from_spec, incidence, is_positive
from .limit_harness import (LimitReport, epsilon_audit, limit_distribution_test, shifted_state)
from .observables import CylinderObservable
from .ordering import VershikOrdering

BLOCK = 1024
_BLOCK_BIAS = 2 ** 40


class NoGap(ValueError):
    """Lyapunov exponents are not separated where a splitting is required."""


class NoReturns(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# sequences


@dataclass(frozen=True)
class SequenceSpec:
    """I.i.d. law on a finite list of graphs on a common vertex set."""

    graphs: tuple[OrientedGraph, ...]
    probs: tuple[float, ...]
    seed: int = 0
    orderings: tuple[VershikOrdering, ...] | None = None

    def __post_init__(self):
        if len(self.graphs) != len(self.probs) or not self.graphs:
            raise ValueError("need one probability per graph")
        p = np.asarray(self.probs, dtype=float)
        if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-12:
            raise ValueError("probabilities must be nonnegative and sum to 1")
        if len({g.m for g in self.graphs}) != 1:
            raise ValueError("all graphs must share the vertex set")
        used = [g for g, q in zip(self.graphs, self.probs) if q > 0]
        for g in used:
            if round(float(np.linalg.det(incidence(g).astype(float)))) == 0:
                raise ValueError("every graph drawn with positive probability needs an invertible incidence matrix")
        if not any(is_positive(incidence(g)) for g in used):
            raise ValueError("some graph with positive probability must have a positive incidence matrix")
        orders = self.orderings or tuple(VershikOrdering.by_edge_id(g) for g in self.graphs)
        for g, o in zip(self.graphs, orders):
            o.validate(g)
        object.__setattr__(self, "orderings", tuple(orders))
        object.__setattr__(self, "probs", tuple(float(q) for q in self.probs))

    @property
    def m(self) -> int:
        return self.graphs[0].m

    @classmethod
    def constant(cls, g: OrientedGraph, o: VershikOrdering | None = None) -> "SequenceSpec":
        return cls((g,), (1.0,), 0, (o,) if o else None)

    @classmethod
    def from_dict(cls, d: dict) -> "SequenceSpec":
        graphs = tuple(graph_from_spec(x if isinstance(x, dict) else {"matrix": x}) for x in d["graphs"])
        probs = tuple(d.get("probs", [1.0 / len(graphs)] * len(graphs)))
        orders = d.get("orderings")
        if orders is not None:
            orders = tuple(VershikOrdering.from_dict(o if isinstance(o, dict) else {"order": o}) for o in orders)
        return cls(graphs, probs, int(d.get("seed", 0)), orders)

    def to_dict(self) -> dict:
        return {"graphs": [g.to_dict() for g in self.graphs], "probs": list(self.probs), "seed": self.seed,
                "orderings": [o.to_dict() for o in self.orderings]}


class GraphSequenceWindow:
    """``omega`` (shifted by ``shift``): level ``n`` carries graph ``index(n)``.

    Draws are made in blocks of ``BLOCK`` levels from streams keyed by
    ``(seed, block)``, so any level can be read in any order reproducibly.
    """

    def __init__(self, spec: SequenceSpec, shift: int = 0, _cache: dict | None = None):
        self.spec = spec
        self.shift = shift
        self._cache = {} if _cache is None else _cache
        self._mats = [incidence(g) for g in spec.graphs]
        self._p = np.asarray(spec.probs)

    def _block(self, b: int) -> np.ndarray:
        if b not in self._cache:
            if len(self._p) == 1:
                self._cache[b] = np.zeros(BLOCK, dtype=np.int64)
            else:
                rng = np.random.default_rng([self.spec.seed, b + _BLOCK_BIAS])
                self._cache[b] = rng.choice(len(self._p), size=BLOCK, p=self._p).astype(np.int64)
        return self._cache[b]

    def index(self, n: int) -> int:
        k = n + self.shift
        return int(self._block(k // BLOCK)[k % BLOCK])

    def indices(self, lo: int, hi: int) -> np.ndarray:
        return np.array([self.index(n) for n in range(lo, hi + 1)], dtype=np.int64)

    def graph(self, n: int) -> OrientedGraph:
        return self.spec.graphs[self.index(n)]

    def matrix(self, n: int) -> np.ndarray:
        return self._mats[self.index(n)]

    def shifted(self, k: int = 1) -> "GraphSequenceWindow":
        """``sigma^k omega``: level ``n`` of the result is level ``n + k`` here."""
        return GraphSequenceWindow(self.spec, self.shift + k, self._cache)

    @property
    def m(self) -> int:
        return self.spec.m


def sample_sequence(spec: SequenceSpec, window: tuple[int, int] = (-BLOCK, BLOCK)) -> GraphSequenceWindow:
    """Sequence with law ``spec``; the levels of ``window`` are drawn eagerly."""
    seq = GraphSequenceWindow(spec)
    seq.indices(*window)
    return seq


# ---------------------------------------------------------------------------
# renormalisation cocycle


def _exact(M) -> sympy.Matrix:
    return sympy.Matrix(np.asarray(M).tolist())


class RenormCocycle:
    def __init__(self, seq: GraphSequenceWindow):
        self.seq = seq
        self._inv = {}

    def _inverse(self, n: int) -> sympy.Matrix:
        k = self.seq.index(n)
        if k not in self._inv:
            self._inv[k] = _exact(self.seq.matrix(n)).inv()
        return self._inv[k]

    def A(self, n: int) -> sympy.Matrix:
        """``AA(n, omega)`` in exact arithmetic."""
        m = self.seq.m
        out = sympy.eye(m)
        if n > 0:
            for j in range(1, n + 1):
                out = _exact(self.seq.matrix(j)) * out
        elif n < 0:
            for j in range(0, n, -1):          # A(w_0)^{-1}, then A(w_{-1})^{-1} on the left
                out = self._inverse(j) * out
        return out

    def At(self, n: int) -> sympy.Matrix:
        """``AAt(n, omega)``: a cocycle over the inverse shift."""
        m = self.seq.m
        out = sympy.eye(m)
        if n > 0:
            for j in range(0, -n, -1):         # A(w_0)^t, then A(w_{-1})^t on the left
                out = _exact(self.seq.matrix(j)).T * out
        elif n < 0:
            for j in range(1, -n + 1):
                out = self._inverse(j).T * out
        return out

    def shifted(self, k: int) -> "RenormCocycle":
        return RenormCocycle(self.seq.shifted(k))

    def cocycle_defect(self, n: int, k: int) -> int:
        """Number of nonzero entries of ``AA(n+k, w) - AA(k, sigma^n w) AA(n, w)``."""
        diff = self.A(n + k) - self.shifted(n).A(k) * self.A(n)
        return sum(1 for x in diff if x != 0)

    def transpose_cocycle_defect(self, n: int, k: int) -> int:
        diff = self.At(n + k) - self.shifted(-n).At(k) * self.At(n)
        return sum(1 for x in diff if x != 0)


# ---------------------------------------------------------------------------
# Lyapunov spectrum


@dataclass
class LyapunovResult:
    exponents: np.ndarray
    ci: np.ndarray                  # (m, 2)
    N: int
    mean_log_norm: float
    mean_log_inv_norm: float
    transpose: bool = False

    @property
    def integrable(self) -> bool:
        return math.isfinite(self.mean_log_norm) and math.isfinite(self.mean_log_inv_norm)

    def disjoint(self, i: int, j: int) -> bool:
        a, b = self.ci[i], self.ci[j]
        return a[1] < b[0] or b[1] < a[0]


def _block_bootstrap(logs: np.ndarray, block: int, n_boot: int, rng) -> np.ndarray:
    """Percentile CI of the column means by resampling consecutive blocks."""
    T = logs.shape[0]
    nb = max(T // block, 1)
    sums = np.array([logs[i * block:(i + 1) * block].sum(axis=0) for i in range(nb)])
    lens = np.array([min(block, T - i * block) for i in range(nb)])
    est = np.empty((n_boot, logs.shape[1]))
    for b in range(n_boot):
        pick = rng.integers(0, nb, size=nb)
        est[b] = sums[pick].sum(axis=0) / lens[pick].sum()
    return np.percentile(est, [2.5, 97.5], axis=0).T


def _positive_qr(M):
    Qm, Rm = np.linalg.qr(M)
    s = np.sign(np.diag(Rm))
    s[s == 0] = 1.0
    return Qm * s, (Rm.T * s).T


def lyapunov_spectrum(seq: GraphSequenceWindow, N: int = 10_000, reorth_period: int = 1,
                      transpose: bool = False, burn: int = 100, block: int = 200, n_boot: int = 500,
                      seed=0) -> LyapunovResult:
    """Exponents of ``AA`` (or ``AAt``) from re-orthonormalised products.

    The first ``burn`` steps align the frame and are not counted.  CIs come
    from a block bootstrap over the per-step logarithms.
    """
    m = seq.m
    rng = np.random.default_rng(seed)
    Qm, _ = np.linalg.qr(rng.standard_normal((m, m)))
    if transpose:
        mats = [seq.matrix(j).T.astype(float) for j in range(0, -(burn + N), -1)]
    else:
        mats = [seq.matrix(j).astype(float) for j in range(1 - burn, N + 1)]
    logs = []
    acc = np.eye(m)
    for i, A in enumerate(mats):
        acc = A @ acc
        if (i + 1) % reorth_period and i + 1 < len(mats):
            continue
        Qm, Rm = _positive_qr(acc @ Qm)
        acc = np.eye(m)
        if i >= burn:
            logs.append(np.log(np.abs(np.diag(Rm))))
    logs = np.array(logs)
    steps = N / len(logs)
    exps = logs.sum(axis=0) / N
    ci = _block_bootstrap(logs, max(block // reorth_period, 1), n_boot, rng) / steps
    norms = [np.log(np.linalg.norm(A, 1)) for A in mats[burn:]]
    inv = [np.log(np.linalg.norm(np.linalg.inv(A), 1)) for A in mats[burn:]]
    return LyapunovResult(exps, ci, N, float(np.mean(norms)), float(np.mean(inv)), transpose)


def _exterior_norm_logs(P, k_max: int) -> list[float]:
    """``log max |k x k minor|`` of an exact integer matrix for ``k = 1..k_max``."""
    M = sympy.Matrix(P)
    m = M.shape[0]
    out = []
    for k in range(1, k_max + 1):
        best = 0
        for rows in itertools.combinations(range(m), k):
            for cols in itertools.combinations(range(m), k):
                d = abs(int(M.extract(list(rows), list(cols)).det(method="bareiss")))
                best = max(best, d)
        out.append(math.log(best) if best > 0 else -math.inf)
    return out


def norm_growth_exponents(seq: GraphSequenceWindow, N: int, k_max: int | None = None) -> np.ndarray:
    """Brute-force exponents from the exact product ``AA(N)``.

    The ``k``-th exponent is the growth of the largest ``k x k`` minor minus
    that of the largest ``(k-1) x (k-1)`` minor, divided by ``N``.
    """
    m = seq.m
    k_max = m if k_max is None else k_max
    P = [[int(v) for v in row] for row in np.eye(m, dtype=np.int64)]
    for j in range(1, N + 1):
        A = seq.matrix(j)
        P = [[sum(int(A[i, r]) * P[r][c] for r in range(m)) for c in range(m)] for i in range(m)]
    logs = [0.0] + _exterior_norm_logs(P, k_max)
    return np.diff(logs) / N


def singular_value_slopes(seq: GraphSequenceWindow, n_max: int = 50) -> np.ndarray:
    """Slopes in ``n`` of ``log sigma_i(AA(n))`` for ``n <= n_max`` (exact products, float SVD)."""
    m = seq.m
    P = np.eye(m, dtype=object)
    rows = []
    for n in range(1, n_max + 1):
        P = seq.matrix(n).astype(object) @ P
        big = max(abs(int(x)) for x in P.flat)
        shift = max(big.bit_length() - 60, 0)
        F = np.array([[float(int(x) >> shift) if shift else float(x) for x in r] for r in P])
        rows.append(np.log(np.linalg.svd(F, compute_uv=False)) + shift * math.log(2))
    rows = np.array(rows)
    n = np.arange(1, n_max + 1)
    half = n_max // 2
    return np.array([np.polyfit(n[half:], rows[half:, i], 1)[0] for i in range(m)])


# ---------------------------------------------------------------------------
# Oseledets frames and the level source


def _l1_normalise_sign(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    v = v / np.abs(v).sum()
    big = np.abs(v).max()
    j = int(np.flatnonzero(np.abs(v) > 1e-12 * big)[0])
    return v if v[j] > 0 else -v


def _line_in(frame: np.ndarray, avoid: np.ndarray) -> np.ndarray:
    """The vector of ``span(frame)`` orthogonal to the columns of ``avoid``."""
    if avoid.shape[1] == 0:
        return frame[:, 0]
    Cm = avoid.T @ frame
    _, _, Vt = np.linalg.svd(Cm)
    return frame @ Vt[-1]


class SequenceSource:
    """Level source for a graph sequence with ``dim E^+ = k`` (simple exponents).

    Each Oseledets line is carried separately: at every level ``l`` the
    adapted vector ``U[l][:, i]`` spans the top-``(i+1)`` flag intersected with
    the annihilator of the dual top-``i`` flag, and ``A(omega_l) U[l][:, i] =
    r[l][i] U[l+1][:, i]``.  Vectors of ``E^+`` are pushed as coefficient
    times growth factor, which stays accurate for the slower lines.  The
    positive line uses exact integer pushes of the positive cone, so ``h``,
    ``lambda`` and all masses are correctly rounded.
    """

    def __init__(self, seq: GraphSequenceWindow, k: int, lo: int = -60, hi: int = 64, burn: int = 120, seed=0):
        if k < 1:
            raise NoGap("no expanding direction")
        self.seq = seq
        self.k = k
        self.m = m = seq.m
        self.graphs = list(seq.spec.graphs)
        self.orderings = list(seq.spec.orderings)
        self.min_level, self.max_level = lo, hi
        self.burn = burn
        a, b = lo - 1, hi + 1
        self._a, self._b = a, b
        mats = {l: seq.matrix(l) for l in range(a - burn - 1, b + burn + 2)}
        # exact pushes of the positive cone: p[l+1] = A(w_l) p[l], g[n-1] = A(w_n)^t g[n]
        p, vec = {}, [1] * m
        for l in range(a - burn, b + 1):
            if l >= a:
                p[l] = vec
            vec = [sum(int(mats[l][i, j]) * vec[j] for j in range(m)) for i in range(m)]
        p[b + 1] = vec
        g, vec = {}, [1] * m
        for n in range(b + 1 + burn, a - 2, -1):
            if n <= b + 1:
                g[n] = vec
            vec = [sum(int(mats[n][j, i]) * vec[j] for j in range(m)) for i in range(m)]
        g[a - 1] = vec
        self._p, self._g = p, g
        la = np.array([Fraction(x, sum(g[0])) for x in g[0]])
        self._s = 1 / sum(la[i] * p[1][i] for i in range(m))           # h = s p[1]
        self.la = la.astype(float)
        self.h = np.array([float(self._s * x) for x in p[1]])
        # QR flags for the slower lines
        rng = np.random.default_rng(seed)
        Qf, G = {}, {}
        Qm, _ = np.linalg.qr(rng.standard_normal((m, m)))
        for l in range(a - burn, b + 2):
            if l >= a:
                Qf[l] = Qm
            Qm, _ = _positive_qr(mats[l] @ Qm)
        Gm, _ = np.linalg.qr(rng.standard_normal((m, m)))
        for n in range(b + 1 + burn, a - 2, -1):
            if n <= b + 1:
                G[n] = Gm
            Gm, _ = _positive_qr(mats[n].T @ Gm)
        G[a - 1] = Gm
        self.Qf, self.G = Qf, G
        U, D = {}, {}
        for l in range(a, b + 2):
            Ul = np.zeros((m, k))
            Dl = np.zeros((m, k))
            pl = np.array([float(x) for x in _scaled(p[l])])
            gl = np.array([float(x) for x in _scaled(g[l - 1])])
            Ul[:, 0] = pl / pl.sum()
            Dl[:, 0] = gl / float(Ul[:, 0] @ gl)
            for i in range(1, k):
                u = _l1_normalise_sign(_line_in(Qf[l][:, :i + 1], G[l - 1][:, :i]))
                w = _line_in(G[l - 1][:, :i + 1], Qf[l][:, :i])
                Ul[:, i] = u
                Dl[:, i] = w / float(u @ w)
            U[l], D[l] = Ul, Dl
        self.U, self.D = U, D
        r = {l: np.einsum("ij,ji->i", (mats[l] @ U[l]).T, D[l + 1]) for l in range(a, b + 1)}
        # growth factors kept as log-modulus and sign so deep windows do not overflow
        logc, sgn = {1: np.zeros(k)}, {1: np.ones(k)}
        for l in range(1, b + 1):
            logc[l + 1] = logc[l] + np.log(np.abs(r[l]))
            sgn[l + 1] = sgn[l] * np.sign(r[l])
        for l in range(0, a - 1, -1):
            logc[l] = logc[l + 1] - np.log(np.abs(r[l]))
            sgn[l] = sgn[l + 1] * np.sign(r[l])
        self.r, self.logc, self.sgn = r, logc, sgn

    def growth(self, level: int) -> np.ndarray:
        """Signed factors ``c_i`` with ``AA(level-1) U[1][:, i] = c_i U[level][:, i]``."""
        with np.errstate(over="ignore"):
            return self.sgn[level] * np.exp(self.logc[level])

    # -- frames ---------------------------------------------------------------

    def frame(self, level: int) -> np.ndarray:
        """Orthonormal flag at ``level``: leading columns span the fastest directions."""
        return self.Qf[level]

    def dual_frame(self, n: int) -> np.ndarray:
        """Dual flag at ``n`` (pairs with level ``n + 1`` vectors)."""
        return self.G[n]

    def lam_dir(self, n: int) -> np.ndarray:
        g = self._g[n]
        return np.array([float(Fraction(x, sum(g))) for x in g])

    def exact_mass(self, level: int) -> list[Fraction]:
        """``AA(level-1) h`` as exact rationals relative to the rounded ``lambda``."""
        return [self._s * x for x in self._p[level]]

    # -- level-source interface ------------------------------------------------------------

    def graph_index(self, level: int) -> int:
        return self.seq.index(level)

    def incidence_at(self, level: int) -> np.ndarray:
        return self.seq.matrix(level)

    def sub_masses(self, level: int) -> np.ndarray:
        return np.array([float(x) for x in self.exact_mass(level)])

    def lam(self, level: int) -> np.ndarray:
        return self.lam_dir(level)

    def coords(self, v) -> np.ndarray:
        """Coefficients of ``v`` (a level-1 vector of ``E^+``) on the adapted basis."""
        v = np.asarray(v, dtype=complex)
        coef = self.D[1].T @ v
        if np.linalg.norm(self.U[1] @ coef - v) > 1e-8 * max(1.0, np.linalg.norm(v)):
            raise ValueError("vector is not in the expanding space")
        return coef

    def plus_rows(self, v, lo: int, hi: int) -> np.ndarray:
        """``AA(l-1) v`` for ``l = lo..hi``."""
        coef = self.coords(v)
        return np.array([self.U[l] @ (coef * self.growth(l)) for l in range(lo, hi + 1)], dtype=complex)

    def push(self, v, n: int) -> np.ndarray:
        return self.plus_rows(v, n + 1, n + 1)[0]


def _scaled(vec: list[int]) -> list[Fraction]:
    top = max(vec)
    return [Fraction(x, top) for x in vec]


@dataclass
class OseledetsData:
    exponents: np.ndarray
    ci: np.ndarray
    dim_plus: int
    E_plus: np.ndarray
    Et_plus: np.ndarray
    h: np.ndarray
    la: np.ndarray
    basis: np.ndarray               # columns v_1 = h, v_2, ...
    dual: np.ndarray                # biorthogonal to basis
    top2_simple: bool
    cauchy: float = 0.0

    @property
    def v2(self) -> np.ndarray:
        return self.basis[:, 1]

    @property
    def vt2(self) -> np.ndarray:
        return self.dual[:, 1]


def _classify(ly: LyapunovResult, zero_tol: float = 1e-9) -> int:
    k = 0
    for e, (lo, hi) in zip(ly.exponents, ly.ci):
        if lo > zero_tol:
            k += 1
        elif hi <= zero_tol or e <= zero_tol and abs(hi - lo) < zero_tol:
            break
        else:
            raise NoGap(f"exponent {e:.4g} with CI ({lo:.4g}, {hi:.4g}) is not separated from 0")
    return k


def _adapted_bases(src: SequenceSource):
    """``v_1 = h``, ``v_i`` adapted; duals biorthogonal with ``vt_1 = lambda``."""
    basis = src.U[1].copy()
    dual = src.D[1].copy()
    basis[:, 0] = src.h
    dual[:, 0] = src.la
    return basis, dual


def oseledets_spaces(seq: GraphSequenceWindow, lyap: LyapunovResult | None = None, N: int = 120,
                     tol_osel: float = 1e-8, center: int = 0) -> OseledetsData:
    """Expanding spaces at ``sigma^center omega`` from burn-ins ``N`` and ``2N``."""
    seq = seq.shifted(center) if center else seq
    lyap = lyap or lyapunov_spectrum(seq)
    k = _classify(lyap)
    if seq.m == 1:
        src = SequenceSource(seq, 1, lo=-1, hi=2, burn=N)
        return OseledetsData(lyap.exponents, lyap.ci, 1, np.ones((1, 1)), np.ones((1, 1)), src.h, src.la,
                             src.h[:, None], src.la[:, None], False, 0.0)
    a = SequenceSource(seq, k, lo=-1, hi=2, burn=N)
    b = SequenceSource(seq, k, lo=-1, hi=2, burn=2 * N, seed=1)
    dist = max(float(np.max(subspace_angles(a.frame(1)[:, :k], b.frame(1)[:, :k]))),
               float(np.max(subspace_angles(a.dual_frame(0)[:, :k], b.dual_frame(0)[:, :k]))))
    if dist > tol_osel:
        raise NoGap(f"Oseledets frames not converged: distance {dist:.3g} > {tol_osel:g}")
    top2 = len(lyap.exponents) > 1 and k >= 2 and lyap.disjoint(0, 1)
    basis, dual = _adapted_bases(b)
    return OseledetsData(lyap.exponents, lyap.ci, k, b.frame(1)[:, :k], b.dual_frame(0)[:, :k],
                         b.h, b.la, basis, dual, top2, dist)


# ---------------------------------------------------------------------------
# measures over omega


class SequencePlusMeasure:
    """``Phi_v^+`` over ``omega``: ``(AA(l-1) v)_{F(x_l)}`` on level-``l`` cells."""

    def __init__(self, src: SequenceSource, v):
        self.src = src
        self.v = np.asarray(v, dtype=complex)
        src.coords(self.v)

    def level_vector(self, level: int) -> np.ndarray:
        return self.src.plus_rows(self.v, level, level)[0]

    def cell(self, level: int, edge: int) -> complex:
        """Value on the level-``level`` cell with ``x_level = edge`` (local id)."""
        return complex(self.level_vector(level)[self.src.seq.graph(level).F[edge]])


class SequenceMinusMeasure:
    """``Phi_vt^-`` over ``omega``: ``(AAt(-n) vt)_{I(x_n)}`` on level-``n`` minus cells."""

    def __init__(self, seq: GraphSequenceWindow, vt):
        self.seq = seq
        self.vt = np.asarray(vt, dtype=complex)

    def level_vector(self, n: int) -> np.ndarray:
        w = self.vt.copy()
        if n >= 0:
            for j in range(1, n + 1):
                w = np.linalg.solve(self.seq.matrix(j).T.astype(float), w)
        else:
            for j in range(0, n, -1):
                w = self.seq.matrix(j).T.astype(float) @ w
        return w

    def cell(self, n: int, edge: int) -> complex:
        return complex(self.level_vector(n)[self.seq.graph(n).I[edge]])


def sequence_words(seq: GraphSequenceWindow, d: int) -> list[tuple[int, ...]]:
    """Admissible ``(x_1 .. x_d)`` in local edge ids, ``x_l`` an edge of ``omega_l``."""
    if d < 1:
        return [()]
    top = seq.graph(d)
    words = [(e,) for e in range(top.n_edges)]
    for lvl in range(d - 1, 0, -1):
        g = seq.graph(lvl)
        words = [(c,) + w for w in words for c in g.out_edges(int(seq.graph(lvl + 1).F[w[0]]))]
    return words


def pairing_by_cells(plus: SequencePlusMeasure, minus: SequenceMinusMeasure, k: int = 1) -> complex:
    """Sum over length-``k`` cylinders of ``Phi^+(plus part) * Phi^-(minus part)``."""
    seq = minus.seq
    top = plus.level_vector(1)
    bottom = minus.level_vector(k)
    total = 0j
    for w in sequence_words(seq, k):
        total += top[seq.graph(1).F[w[0]]] * bottom[seq.graph(k).I[w[-1]]]
    return total


def generalized_cocycle_measures(model: "SequenceModel", v) -> SequencePlusMeasure:
    return SequencePlusMeasure(model.source, v)


# ---------------------------------------------------------------------------
# model


class SequenceModel:
    """Everything the limit harness needs, for a graph sequence."""

    def __init__(self, seq: GraphSequenceWindow, lyap: LyapunovResult | None = None, lo: int = -60,
                 hi: int = 64, burn: int = 120, N: int = 10_000, seed=0):
        self.seq = seq
        self.lyap = lyap or lyapunov_spectrum(seq, N=N, seed=seed)
        k = _classify(self.lyap)
        self.m = seq.m
        self.source = SequenceSource(seq, k, lo=lo, hi=hi, burn=burn, seed=seed)
        self.k = k
        self.theta1 = float(self.lyap.exponents[0])
        self.theta2 = float(self.lyap.exponents[1]) if k > 1 else float("nan")
        self.h, self.la = self.source.h, self.source.la
        self.basis, self.dual = _adapted_bases(self.source)
        self.v2 = self.basis[:, 1] if k > 1 else None
        self.vt2 = self.dual[:, 1] if k > 1 else None

    def exponents(self) -> list[float]:
        return [float(e) for e in self.lyap.exponents[:self.k]]

    def shifted(self, j: int = 1) -> "SequenceModel":
        s = self.source
        return SequenceModel(self.seq.shifted(j), self.lyap, s.min_level, s.max_level, s.burn)

    # -- functionals of observables -------------------------------------------------

    def minus_value(self, f: CylinderObservable, vt) -> complex:
        """``m_{Phi^-_vt}(f)``: sum over words of ``f * h_{F(x_1)} * (AAt(-d) vt)_{I(x_d)}``."""
        d = f.depth
        mi = SequenceMinusMeasure(self.seq, vt)
        if d == 0:
            return complex(f.constant * (self.h @ mi.vt))
        bottom = mi.level_vector(d)
        g1, gd = self.seq.graph(1), self.seq.graph(d)
        total = 0j
        for w in sequence_words(self.seq, d):
            total += f.value(w) * self.h[g1.F[w[0]]] * bottom[gd.I[w[-1]]]
        return total

    def mean(self, f: CylinderObservable) -> complex:
        return self.minus_value(f, self.la)

    def alpha(self, f: CylinderObservable) -> complex:
        return self.minus_value(f, self.vt2)

    def xi(self, f: CylinderObservable) -> np.ndarray:
        """``sum_i m_{Phi_i^-}(f) v_i`` over the adapted bases."""
        w = np.zeros(self.m, dtype=complex)
        for i in range(self.k):
            w = w + self.minus_value(f, self.dual[:, i]) * self.basis[:, i]
        return w

    # -- scales ----------------------------------------------------------------------

    def time_scale(self, n: int) -> float:
        """``H^(1)(n)``: ratio of level ``n+1`` masses to the normalised masses of ``sigma^n omega``."""
        return float(self._time_ratio(n))

    def _time_ratio(self, n: int) -> Fraction:
        g = self.source._g[n]
        M = self.source.exact_mass(n + 1)
        return sum(Fraction(x) * y for x, y in zip(g, M)) / sum(g)

    def log_time_scale(self, n: int) -> float:
        q = self._time_ratio(n)
        return math.log(q.numerator) - math.log(q.denominator)

    def second_vector(self, n: int) -> np.ndarray:
        """``v_2`` of ``sigma^n omega`` (as a level ``n+1`` vector)."""
        return self.source.U[n + 1][:, 1]

    def second_scale(self, n: int) -> float:
        """Signed ``c_n`` with ``AA(n) v_2 = c_n v_2(sigma^n omega)``; ``|c_n| = H^(2)(n)``."""
        return float(self.source.growth(n + 1)[1])

    def log_second_scale(self, n: int) -> float:
        """``log H^(2)(n)``, valid far beyond the float range of ``c_n``."""
        return float(self.source.logc[n + 1][1])

    def engine(self, measures=(), observables=(), tol_arc=1e-9, hi=None, seed=0) -> AdicFlow:
        return AdicFlow(self.source, measures, observables, tol_arc=tol_arc,
                        hi=self.source.max_level if hi is None else min(hi, self.source.max_level), seed=seed)


# ---------------------------------------------------------------------------
# harness pieces


def return_times(seq: GraphSequenceWindow, n_max: int, L: int = 2, ref: GraphSequenceWindow | None = None,
                 n_min: int = 1) -> list[int]:
    """``n`` with ``omega_{n+j} = ref_j`` for ``j`` in the length-``L`` window around level 1.

    The window is ``j = 1 - L//2 .. L - L//2``, so it sees both the past
    (which fixes the masses) and the future (which fixes the transverse weights).
    """
    ref = ref or seq
    js = range(1 - L // 2, L - L // 2 + 1)
    target = [ref.index(j) for j in js]
    return [n for n in range(n_min, n_max + 1) if [seq.index(n + j) for j in js] == target]


def second_growth_slope(model: SequenceModel, n_max: int | None = None) -> float:
    """Slope in ``n`` of ``log H^(2)(n) - n theta_2``; tends to zero as the window deepens.

    The default uses every level the model's source covers.
    """
    n_max = n_max or model.source.max_level - 1
    n = np.arange(1, n_max + 1)
    y = np.array([model.log_second_scale(int(k)) - k * model.theta2 for k in n])
    return float(np.polyfit(n, y, 1)[0])


@dataclass
class RenormCheck:
    kappa: float
    kappa_spread: float
    h1_norm: float
    defects: list[float] = field(default_factory=list)

    @property
    def max_defect(self) -> float:
        return max(self.defects, default=0.0)


def renormalization_check(model: SequenceModel, level: int = 6, cells: int = 40, vertex: int = 0) -> RenormCheck:
    """Flow by whole level-2 cells in ``X(omega)``, then shift; compare with shift-then-flow.

    ``kappa`` is the exact mass ratio between level-2 cells of ``omega`` and
    level-1 cells of ``sigma omega``.  A defect counts differing coordinates
    plus the offset gap.
    """
    shifted = model.shifted(1)
    e0 = model.engine()
    e1 = shifted.engine()
    M2 = e0.levels.masses(2)
    H1 = e1.levels.masses(1)
    ratio = M2 / H1
    kappa = float(ratio.mean())
    spread = float(np.ptp(ratio))
    h1_norm = float(np.abs(model.seq.matrix(1)).sum(axis=0).max())
    check = RenormCheck(kappa, spread, h1_norm)
    x = e0.minimal_state(level, vertex)
    L0 = e0.levels
    t = 0.0
    cur = x
    for _ in range(cells):
        step = float(M2[L0.eF[cur.window.edges[1]]])
        cur, _ = e0.advance(cur, step)
        t += step
        a = shifted_state(e0, cur, 1, kappa)
        b, _ = e1.advance(FlowState(PathWindow.from_edges(1, x.window.edges[1:]), 0.0, 0.0), t / kappa)
        n = min(len(a.window.edges), len(b.window.edges))
        mism = sum(1 for p, q in zip(a.window.edges[:n], b.window.edges[:n]) if p != q)
        check.defects.append(mism + abs(a.offset - b.offset))
    return check


@dataclass
class GeneralizedReport:
    eps_audit: dict
    limit: LimitReport | None
    returns: list[int]
    growth_slope: float


def generalized_harness(model: SequenceModel, f: CylinderObservable, T_grid, n_max: int = 15,
                        n_count: int = 3, L: int = 2, samples: int = 10_000, eps_values=(0.05, 0.1),
                        tau_grid=(0.0, 0.25, 0.5, 1.0), audit_samples: int = 64, seed=0) -> GeneralizedReport:
    """Error audit against ``1 + T^eps`` and the limit statistics at cylinder-return times."""
    if model.k < 2 or not model.lyap.disjoint(0, 1):
        raise NoGap("top two exponents are not simple and positive")
    audit = epsilon_audit(model, f, T_grid, eps_values, samples=audit_samples, seed=seed)
    rets = return_times(model.seq, n_max, L)
    if not rets:
        raise NoReturns(f"reference cylinder not revisited up to level {n_max}")
    n_list = rets[-n_count:]
    rep = limit_distribution_test(model, f, n_list, samples=samples, tau_grid=tau_grid, seed=seed)
    return GeneralizedReport(audit, rep, rets, second_growth_slope(model))
