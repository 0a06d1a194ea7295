"""The flow along plus leaves: successor maps, exact event-driven motion, arcs and cocycles.

The flow moves a point through level-1 cells in the adic order at unit
speed with respect to ``Phi_1^+``.  A state stores ``x_1 .. x_N`` and the
offset inside the level-1 cell; the coordinates below level 1 are encoded in
the offset.  At a cell boundary the state is always the minimal point of the
later cell (offset 0).
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from . import kernels as K
from ._accel import dd_add, to_dd
from .additive_measures import PlusMeasure
from .compactum import PathWindow
from .graph_core import OrientedGraph
from .levels import LevelData, PeriodicSource
from .observables import CylinderObservable
from .ordering import VershikOrdering
from .spectral import SpectralData

__all__ = [
    "VershikOrdering", "FlowState", "Arc", "AdicFlow", "MaxPathSignal", "HorizonExceeded",
    "successor", "predecessor", "flow", "arc_value", "cocycle", "hoelder_probe",
    "precompose_successor", "periodic_engine", "loglog_slope", "tower_height", "exact_mass",
]

MAX_TABLE = 4_000_000


class MaxPathSignal(Exception):
    """Every coordinate of the window is maximal (or minimal, going backward)."""


class HorizonExceeded(RuntimeError):
    def __init__(self, msg, elapsed=0.0):
        super().__init__(msg)
        self.elapsed = elapsed


def successor(w: PathWindow, o: VershikOrdering, g: OrientedGraph) -> PathWindow:
    """Next level-1 cell: bump the lowest non-maximal coordinate, reset those below to minimal."""
    edges = list(w.edges)
    for i, e in enumerate(edges):
        nxt = o.next_edge(e, g)
        if nxt is not None:
            edges[i] = nxt
            for j in range(i - 1, -1, -1):
                edges[j] = o.min_edge(int(g.F[edges[j + 1]]))
            return PathWindow(w.lo, w.hi, tuple(edges))
    raise MaxPathSignal(f"all coordinates {w.lo}..{w.hi} are maximal")


def predecessor(w: PathWindow, o: VershikOrdering, g: OrientedGraph) -> PathWindow:
    edges = list(w.edges)
    for i, e in enumerate(edges):
        prv = o.prev_edge(e, g)
        if prv is not None:
            edges[i] = prv
            for j in range(i - 1, -1, -1):
                edges[j] = o.max_edge(int(g.F[edges[j + 1]]))
            return PathWindow(w.lo, w.hi, tuple(edges))
    raise MaxPathSignal(f"all coordinates {w.lo}..{w.hi} are minimal")


def precompose_successor(f: CylinderObservable, o: VershikOrdering, g: OrientedGraph,
                         carry_depth: int = 40) -> CylinderObservable:
    """``f o T`` for the adic map ``T``, dropping paths whose first ``carry_depth`` coordinates are maximal.

    On ``{carry at level l, x_l = e}`` the coordinates ``x_1 .. x_{l-1}`` are the
    chain of maximal edges under ``e`` and ``T`` replaces them by the chain of
    minimal edges under the successor of ``e``.
    """
    d = f.depth
    terms = []
    for l in range(1, carry_depth + 1):
        for e in range(g.n_edges):
            nxt = o.next_edge(e, g)
            if nxt is None:
                continue
            old, new = [e], [nxt]
            for _ in range(l - 1):
                old.insert(0, o.max_edge(int(g.F[old[0]])))
                new.insert(0, o.min_edge(int(g.F[new[0]])))
            if l >= d:
                val = f.value(tuple(new))
                if val != 0:
                    terms.append((tuple(old), val))
                continue
            # coordinates l+1..d stay free
            tails = [()]
            for _ in range(d - l):
                tails = [t + (c,) for t in tails
                         for c in g.in_edges(int(g.I[(t[-1] if t else e)]))]
            for t in tails:
                val = f.value(tuple(new) + t)
                if val != 0:
                    terms.append((tuple(old) + t, val))
    return CylinderObservable(tuple(terms), 0.0, f.name)


@dataclass(frozen=True)
class FlowState:
    """``x_1 .. x_N`` (global edge ids), offset inside the level-1 cell, elapsed time."""

    window: PathWindow
    offset_hi: float = 0.0
    offset_lo: float = 0.0
    clock: float = 0.0
    pinned: bool = False

    def __post_init__(self):
        if self.window.lo != 1:
            raise ValueError("flow windows start at index 1")

    @property
    def offset(self) -> float:
        return self.offset_hi + self.offset_lo

    @property
    def N(self) -> int:
        return self.window.hi


@dataclass(frozen=True)
class Arc:
    start: FlowState
    duration: float

    def __post_init__(self):
        if self.duration < 0:
            raise ValueError("arc duration must be nonnegative")


class AdicFlow:
    """Flow engine over a level source with registered measures and observables.

    ``measures`` are vectors ``v`` giving ``Phi_v^+`` on level ``l`` cells as the
    source's ``plus_rows``; ``observables`` are cylinder observables.  Every
    advance returns, per registered item, the measure of the traversed arc or
    the integral of the observable along it.
    """

    def __init__(self, source, measures=(), observables=(), tol_arc: float = 1e-9,
                 hi: int | None = None, lo_min: int = -400, seed=0):
        self.source = source
        self.tol_arc = tol_arc
        self.measures = [np.asarray(v, dtype=complex) for v in measures]
        self.observables = list(observables)
        hi = hi if hi is not None else min(getattr(source, "max_level", 64), 64)
        lo = self._choose_lo(tol_arc, lo_min) if self.measures else 0
        self.levels = LevelData(source, lo, hi)
        self.rng = np.random.default_rng(seed)
        self._build_channels()

    # -- construction ---------------------------------------------------------

    def _choose_lo(self, tol, lo_min):
        lo_min = max(lo_min, getattr(self.source, "min_level", lo_min))
        worst = np.zeros(1 - lo_min)
        for v in self.measures:
            rows = self.source.plus_rows(v, lo_min, 0)
            worst = np.maximum(worst, np.abs(rows).max(axis=1))
        ok = np.flatnonzero(worst < tol)
        if ok.size == 0:
            raise ValueError("arc tolerance not reached above the deepest allowed level")
        return int(lo_min + ok[-1])

    def _build_channels(self):
        L = self.levels
        nm, no = len(self.measures), len(self.observables)
        self.n_items = nm + no
        Kc = 2 * self.n_items
        self.ckind = np.array([0] * (2 * nm) + [1] * (2 * no), dtype=np.int64)
        W = np.zeros((Kc, L.R, L.m))
        for i, v in enumerate(self.measures):
            rows = self.source.plus_rows(v, L.lo, L.hi)
            W[2 * i] = rows.real
            W[2 * i + 1] = rows.imag
        D = max((f.depth for f in self.observables), default=0)
        self.D = D
        E = L.E
        size = E ** D
        if no and size * Kc > MAX_TABLE:
            raise ValueError(f"observable tables too large ({size} codes)")
        tab = np.zeros((Kc, max(D, 1), size if no else 1))
        fval = np.zeros((Kc, size if no else 1))
        if no:
            words = self._level_words(D)
            for j, f in enumerate(self.observables):
                k = 2 * (nm + j)
                V = self._observable_tables(f, words, D, fval, tab, k)
                W[k, 1 - L.lo:] = V.real
                W[k + 1, 1 - L.lo:] = V.imag
        self.W, self.tab, self.fval = W, tab, fval
        self.n_meas = 2 * nm

    def _level_words(self, D):
        """Admissible ``(x_1..x_D)`` in global ids, each level using its own graph."""
        L = self.levels
        if D == 0:
            return [()]
        words = []
        top_g = L.gid[L.row(D)]
        partial = [(int(e),) for e in L.out_list[L.out_ptr[top_g, 0]:L.out_ptr[top_g, L.m]]]
        for lvl in range(D - 1, 0, -1):
            g = L.gid[L.row(lvl)]
            nxt = []
            for w in partial:
                v = L.eF[w[0]]
                for p in range(L.out_ptr[g, v], L.out_ptr[g, v + 1]):
                    nxt.append((int(L.out_list[p]),) + w)
            partial = nxt
        words = partial
        return words

    def _observable_tables(self, f, words, D, fval, tab, k):
        L = self.levels
        E = L.E
        M1 = L.masses(1)
        T = {}
        for w in words:
            code = sum(x * E ** j for j, x in enumerate(w))
            local = tuple(L.local(x) for x in w)
            val = f.value(local)
            fval[k, code] = val.real
            fval[k + 1, code] = val.imag
            if w:
                T[code] = val * M1[L.eF[w[0]]]
        V = np.zeros(L.m, dtype=complex)
        if D == 0:
            c = complex(f.value(()))
            V = c * L.masses(1)
        else:
            for lvl in range(1, D + 1):
                for code, val in T.items():
                    tab[k, lvl - 1, code] = val.real
                    tab[k + 1, lvl - 1, code] = val.imag
                if lvl == D:
                    for code, val in T.items():
                        V[L.eI[code]] += val
                else:
                    nxt = {}
                    for code, val in T.items():
                        nxt[code // E] = nxt.get(code // E, 0.0) + val
                    T = nxt
        out = np.zeros((L.hi, L.m), dtype=complex)        # levels 1..hi
        cur = V
        start = max(D + 1, 1)
        out[start - 1] = cur
        for lvl in range(start, L.hi):
            cur = self.source.incidence_at(lvl) @ cur
            out[lvl] = cur
        return out

    # -- raw kernels ------------------------------------------------------------

    def _args(self):
        L = self.levels
        return (L.lo, L.gid, L.eF, L.eI, L.out_ptr, L.out_list, L.pos, L.Mh, L.Ml,
                self.ckind, self.W, self.tab, self.fval, self.D, L.E, self.n_meas)

    def _pos_args(self):
        L = self.levels
        return (L.lo, L.gid, L.eF, L.eI, L.out_ptr, L.out_list, L.pos)

    def _values(self, acc) -> np.ndarray:
        return acc[0::2] + 1j * acc[1::2]

    def _extend_row(self, P, n_used: int) -> int:
        """Draw ``x_{n+1}`` from the conditional law given ``x_n``."""
        L = self.levels
        if n_used >= L.hi:
            raise HorizonExceeded(f"window would exceed the top level {L.hi}")
        lvl = n_used + 1
        r = L.row(lvl)
        g = L.gid[r]
        v = L.eI[P[n_used - 1]]
        cand = L.in_list[L.in_ptr[g, v]:L.in_ptr[g, v + 1]]
        w = L.Lam[r, L.eI[cand]]
        c = np.cumsum(w)
        P[n_used] = cand[int(np.searchsorted(c, self.rng.random() * c[-1], side="right"))]
        return n_used + 1

    def _state_arrays(self, state: FlowState):
        P = np.zeros(self.levels.hi, dtype=np.int64)
        P[:state.N] = state.window.edges
        return P, state.N

    def _make_state(self, P, n, oh, ol, clock, pinned):
        return FlowState(PathWindow(1, n, tuple(int(x) for x in P[:n])), oh, ol, clock, pinned)

    # -- public API ---------------------------------------------------------------

    def window_for_horizon(self, T: float, factor: float = 4.0) -> int:
        return self.levels.window_for_horizon(T, factor)

    def state(self, edges, offset=0.0, pinned: bool = False) -> FlowState:
        oh, ol = to_dd(offset)
        st = FlowState(PathWindow.from_edges(1, edges), oh, ol, 0.0, pinned)
        self.check_state(st)
        return st

    def check_state(self, st: FlowState):
        L = self.levels
        w = st.window.edges
        for lvl in range(1, len(w)):
            g = L.gid[L.row(lvl)]
            if not (L.offset[g] <= w[lvl - 1] < L.offset[g + 1]):
                raise ValueError(f"edge {w[lvl - 1]} does not belong to the graph at level {lvl}")
            if L.eF[w[lvl]] != L.eI[w[lvl - 1]]:
                raise ValueError(f"window not admissible at index {lvl}")
        mass = L.Mh[L.row(1), L.eF[w[0]]]
        if not 0 <= st.offset < mass:
            raise ValueError("offset outside the level-1 cell")

    def minimal_state(self, level: int, vertex: int) -> FlowState:
        """Bottom point of the level-``level`` cell with ``F(x_level) = vertex``.

        The coordinates above ``level`` are the maximal chain over ``x_level``;
        only ``F(x_level)`` matters for the cell mass.
        """
        L = self.levels
        g = L.gid[L.row(level)]
        top = int(L.in_list[L.in_ptr[g, vertex]])
        P = [top]
        for lvl in range(level - 1, 0, -1):
            gg = L.gid[L.row(lvl)]
            P.insert(0, int(L.out_list[L.out_ptr[gg, L.eF[P[0]]]]))
        return FlowState(PathWindow.from_edges(1, P), 0.0, 0.0, 0.0, False)

    def advance(self, state: FlowState, t) -> tuple[FlowState, np.ndarray]:
        """Flow forward by ``t >= 0``; values of all registered items on the arc."""
        th, tl = to_dd(t)
        if th < 0:
            raise ValueError("use flow() for negative times")
        P, n = self._state_arrays(state)
        acc = np.zeros(len(self.ckind))
        while True:
            acc[:] = 0.0
            st, oh, ol = K.advance(P, n, state.offset_hi, state.offset_lo, th, tl, *self._args(), acc)
            if st == K.OK:
                break
            if state.pinned:
                raise HorizonExceeded("pinned window exhausted", 0.0)
            n = self._extend_row(P, n)
        return self._make_state(P, n, oh, ol, state.clock + th + tl, state.pinned), self._values(acc)

    def retreat(self, state: FlowState, t) -> FlowState:
        th, tl = to_dd(t)
        P, n = self._state_arrays(state)
        while True:
            st, oh, ol = K.retreat(P, n, state.offset_hi, state.offset_lo, th, tl, *self._pos_args(),
                                   self.levels.Mh, self.levels.Ml)
            if st == K.OK:
                break
            if state.pinned:
                raise HorizonExceeded("pinned window exhausted", 0.0)
            n = self._extend_row(P, n)
        return self._make_state(P, n, oh, ol, state.clock - th - tl, state.pinned)

    def flow(self, state: FlowState, t) -> FlowState:
        if float(t) >= 0:
            return self.advance(state, t)[0]
        return self.retreat(state, -t)

    def values(self, state: FlowState, t) -> np.ndarray:
        """Values on ``[x, h_t x)``; for ``t < 0`` the negative of the values on ``[h_t x, x)``."""
        if float(t) >= 0:
            return self.advance(state, t)[1]
        back = self.retreat(state, -t)
        return -self.advance(back, -t)[1]

    def advance_slow(self, state: FlowState, t) -> tuple[FlowState, np.ndarray, int]:
        """Oracle version crossing one level-1 cell per step."""
        th, tl = to_dd(t)
        P, n = self._state_arrays(state)
        acc = np.zeros(len(self.ckind))
        while True:
            acc[:] = 0.0
            Pc = P.copy()
            st, oh, ol, ev = K.advance_slow(Pc, n, state.offset_hi, state.offset_lo, th, tl,
                                            *self._args(), acc)
            if st == K.OK:
                break
            if state.pinned:
                raise HorizonExceeded("pinned window exhausted", 0.0)
            n = self._extend_row(P, n)
        return self._make_state(Pc, n, oh, ol, state.clock + th + tl, state.pinned), self._values(acc), ev

    def next_cell(self, state: FlowState) -> FlowState:
        P, n = self._state_arrays(state)
        while K.successor(P, n, *self._pos_args()) != K.OK:
            if state.pinned:
                raise MaxPathSignal("pinned window has only maximal coordinates")
            n = self._extend_row(P, n)
        return self._make_state(P, n, 0.0, 0.0, state.clock, state.pinned)

    # -- batches --------------------------------------------------------------------

    def sample_batch(self, S: int, N: int, rng=None, uniform_offset: bool = True):
        """``S`` points drawn from the invariant measure, as raw arrays ``(P, n_used, offsets)``.

        ``x_N`` is drawn with weight ``Lam(N)_{I(e)} M(N)_{F(e)}``; lower
        coordinates with weight ``M(l-1)_{F(y)}`` among the children of ``x_l``;
        the offset is uniform in the level-1 cell.
        """
        rng = self.rng if rng is None else np.random.default_rng(rng)
        L = self.levels
        P = np.zeros((S, L.hi), dtype=np.int64)
        g = L.gid[L.row(N)]
        top = L.out_list[L.out_ptr[g, 0]:L.out_ptr[g, L.m]]
        w = L.Lam[L.row(N), L.eI[top]] * L.masses(N)[L.eF[top]]
        c = np.cumsum(w)
        P[:, N - 1] = top[np.searchsorted(c, rng.random(S) * c[-1], side="right")]
        for lvl in range(N - 1, 0, -1):
            r = L.row(lvl)
            gg = L.gid[r]
            Mv = L.masses(lvl)
            u = rng.random(S)
            parent_v = L.eF[P[:, lvl]]
            for v in range(L.m):
                mask = parent_v == v
                if not mask.any():
                    continue
                cand = L.out_list[L.out_ptr[gg, v]:L.out_ptr[gg, v + 1]]
                cc = np.cumsum(Mv[L.eF[cand]])
                P[mask, lvl - 1] = cand[np.searchsorted(cc, u[mask] * cc[-1], side="right")]
        n_used = np.full(S, N, dtype=np.int64)
        off = np.zeros((S, 2))
        if uniform_offset:
            m1 = L.masses(1)[L.eF[P[:, 0]]]
            off[:, 0] = rng.random(S) * m1
        return P, n_used, off

    def advance_batch(self, P, n_used, off, t) -> np.ndarray:
        """Advance every row in place by ``t`` (scalar or per-row); complex values per item."""
        S = P.shape[0]
        t2 = np.zeros((S, 2))
        if np.ndim(t) == 0:
            t2[:, 0], t2[:, 1] = to_dd(t)
        else:
            t2[:, 0] = np.asarray(t, dtype=float)
        acc = np.zeros((S, len(self.ckind)))
        status = np.zeros(S, dtype=np.int64)
        K.advance_batch(P, n_used, off, t2, *self._args(), acc, status)
        for s in np.flatnonzero(status != K.OK):
            while True:
                n_used[s] = self._extend_row(P[s], int(n_used[s]))
                acc[s] = 0.0
                st, oh, ol = K.advance(P[s], n_used[s], off[s, 0], off[s, 1], t2[s, 0], t2[s, 1],
                                       *self._args(), acc[s])
                if st == K.OK:
                    off[s] = oh, ol
                    break
        return acc[:, 0::2] + 1j * acc[:, 1::2]

    def trace_csv(self, state: FlowState, n_events: int, labels=None) -> str:
        """One row per level-1 cell entered: event index, clock, vertex, item values so far."""
        labels = labels or [f"item{i}" for i in range(self.n_items)]
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["event", "clock", "vertex"] + [f"{lab}_re" for lab in labels] + [f"{lab}_im" for lab in labels])
        total = np.zeros(self.n_items, dtype=complex)
        L = self.levels
        st = state
        for ev in range(n_events):
            wr.writerow([ev, repr(float(st.clock)), int(L.eF[st.window.edges[0]])]
                        + [repr(float(z.real)) for z in total] + [repr(float(z.imag)) for z in total])
            f1 = L.eF[st.window.edges[0]]
            rest = dd_add(L.Mh[L.row(1), f1], L.Ml[L.row(1), f1], -st.offset_hi, -st.offset_lo)
            st, vals = self.advance(st, rest)
            total = total + vals
        return buf.getvalue()


def periodic_engine(g: OrientedGraph, sd: SpectralData, o: VershikOrdering | None = None,
                    measures=(), observables=(), tol_arc: float = 1e-9, hi: int = 64, seed=0) -> AdicFlow:
    vecs = [m.v if isinstance(m, PlusMeasure) else m for m in measures]
    return AdicFlow(PeriodicSource(g, sd, o), vecs, observables, tol_arc=tol_arc, hi=hi, seed=seed)


# spec-shaped helpers ------------------------------------------------------------


def flow(engine: AdicFlow, start: FlowState, t) -> FlowState:
    """``h_t^+`` applied to ``start``; exactly ``Phi_1^+([start, result]) = t``."""
    return engine.flow(start, t)


def arc_value(engine: AdicFlow, item: int, a: Arc) -> complex:
    """Value of registered item ``item`` on the arc ``[x, h_t x)``."""
    return complex(engine.advance(a.start, a.duration)[1][item])


def cocycle(engine: AdicFlow, item: int, start: FlowState, t) -> complex:
    """``Phi^+(x, t)``; negative ``t`` allowed."""
    return complex(engine.values(start, t)[item])


def hoelder_probe(engine: AdicFlow, item: int, samples: int, t_values, N: int | None = None,
                  rng=None) -> list[tuple[float, float]]:
    """``(t, max over sampled x of |Phi^+(x, t)|)`` for each ``t``."""
    t_values = list(t_values)
    N = N or engine.window_for_horizon(max(t_values))
    P0, n0, off0 = engine.sample_batch(samples, N, rng=rng)
    out = []
    for t in t_values:
        P, n, off = P0.copy(), n0.copy(), off0.copy()
        vals = engine.advance_batch(P, n, off, t)[:, item]
        out.append((float(t), float(np.max(np.abs(vals)))))
    return out


def loglog_slope(table) -> float:
    t = np.log([r[0] for r in table])
    y = np.log([r[1] for r in table])
    return float(np.polyfit(t, y, 1)[0])


def tower_height(engine: AdicFlow, level: int, vertex: int) -> float:
    return float(engine.levels.masses(level)[vertex])


def exact_mass(engine: AdicFlow, level: int, vertex: int) -> tuple[float, float]:
    L = engine.levels
    r = L.row(level)
    return float(L.Mh[r, vertex]), float(L.Ml[r, vertex])
