"""Per-level tables shared by the flow kernels.

A *level source* describes which graph sits at each level and supplies the
positive data needed there; ``LevelData`` flattens it into arrays for levels
``lo..hi``.  Row ``r`` of every table is level ``lo + r``.  Edge ids inside
the tables are global: graph ``k`` owns ids ``offset[k] .. offset[k+1]-1``.

Plus-cell masses ``M(l)`` are stored as double-double pairs.  Levels above 1
are built from level 1 by summing children, so every such cell is exactly the
sum of its sub-cells in the arithmetic the kernels use.  Levels ``<= 1`` come
from the source; there a sub-cell sum may differ from its parent by rounding,
which the kernels absorb by clamping into the last child.
"""
from __future__ import annotations

import numpy as np

from ._accel import dd_add
from .additive_measures import power_apply
from .graph_core import OrientedGraph, incidence
from .ordering import VershikOrdering
from .spectral import SpectralData


class PeriodicSource:
    """The same graph at every level; data from its spectral decomposition."""

    def __init__(self, g: OrientedGraph, sd: SpectralData, o: VershikOrdering | None = None):
        self.g = g
        self.sd = sd
        self.o = (o or VershikOrdering.by_edge_id(g)).validate(g)
        self.graphs = [g]
        self.orderings = [self.o]
        self.m = g.m
        self.Q = incidence(g)

    def graph_index(self, level: int) -> int:
        return 0

    def incidence_at(self, level: int) -> np.ndarray:
        return self.Q

    def sub_masses(self, level: int) -> np.ndarray:
        """Masses of level ``level <= 1`` cells: ``h rho^(level-1)``."""
        return self.sd.h / self.sd.rho ** (1 - level)

    def lam(self, level: int) -> np.ndarray:
        """Minus-cell weights at ``level`` up to a level-independent scale."""
        return self.sd.la

    def plus_rows(self, v, lo: int, hi: int) -> np.ndarray:
        """``Phi_v^+`` on level ``l`` cells, ``l = lo..hi``, indexed by ``F(x_l)``."""
        v = np.asarray(v, dtype=complex)
        rows = np.empty((hi - lo + 1, self.m), dtype=complex)
        start = max(lo, 1)
        if lo < 1:
            for l in range(lo, min(hi, 0) + 1):
                rows[l - lo] = power_apply(self.sd, v, l - 1)
        cur = power_apply(self.sd, v, start - 1)
        Qc = self.Q.astype(complex)
        for l in range(start, hi + 1):
            rows[l - lo] = cur
            cur = Qc @ cur
        return rows


class LevelData:
    def __init__(self, source, lo: int, hi: int):
        if lo > 0 or hi < 1:
            raise ValueError("levels must include 0 and 1")
        self.source = source
        self.lo, self.hi = lo, hi
        self.m = source.m
        graphs = source.graphs
        self.G = len(graphs)
        self.offset = np.cumsum([0] + [gr.n_edges for gr in graphs]).astype(np.int64)
        self.E = int(self.offset[-1])
        R = hi - lo + 1
        self.R = R
        self.gid = np.array([source.graph_index(l) for l in range(lo, hi + 1)], dtype=np.int64)
        eI, eF = [], []
        for gr in graphs:
            eI += list(gr.I)
            eF += list(gr.F)
        self.eI = np.array(eI, dtype=np.int64)
        self.eF = np.array(eF, dtype=np.int64)
        m = self.m
        out_ptr = np.zeros((self.G, m + 1), dtype=np.int64)
        in_ptr = np.zeros((self.G, m + 1), dtype=np.int64)
        out_list, in_list = [], []
        pos = np.zeros(self.E, dtype=np.int64)
        for k, (gr, o) in enumerate(zip(graphs, source.orderings)):
            off = int(self.offset[k])
            for v in range(m):
                out_ptr[k, v] = len(out_list)
                for e in o.order[v]:
                    pos[off + e] = len(out_list)
                    out_list.append(off + e)
                in_ptr[k, v] = len(in_list)
                in_list += [off + e for e in gr.in_edges(v)]
            out_ptr[k, m] = len(out_list)
            in_ptr[k, m] = len(in_list)
        # rows of out_ptr/in_ptr index into the flat lists directly
        self.out_ptr, self.in_ptr = out_ptr, in_ptr
        self.out_list = np.array(out_list, dtype=np.int64)
        self.in_list = np.array(in_list, dtype=np.int64)
        self.pos = pos
        self._build_masses()
        self.Lam = np.array([source.lam(l) for l in range(lo, hi + 1)], dtype=float)

    def row(self, level: int) -> int:
        if not self.lo <= level <= self.hi:
            raise IndexError(f"level {level} outside [{self.lo},{self.hi}]")
        return level - self.lo

    def _build_masses(self):
        Mh = np.zeros((self.R, self.m))
        Ml = np.zeros((self.R, self.m))
        r1 = 1 - self.lo
        for r in range(r1 + 1):
            Mh[r] = self.source.sub_masses(self.lo + r)
        for r in range(r1 + 1, self.R):
            k = self.gid[r - 1]                      # graph at level lo + r - 1
            for v in range(self.m):
                sh, sl = 0.0, 0.0
                for p in range(self.out_ptr[k, v], self.out_ptr[k, v + 1]):
                    f = self.eF[self.out_list[p]]
                    sh, sl = dd_add(sh, sl, Mh[r - 1, f], Ml[r - 1, f])
                Mh[r, v], Ml[r, v] = sh, sl
        self.Mh, self.Ml = Mh, Ml

    def masses(self, level: int) -> np.ndarray:
        r = self.row(level)
        return self.Mh[r] + self.Ml[r]

    def graph_at(self, level: int) -> OrientedGraph:
        return self.source.graphs[self.gid[self.row(level)]]

    def local(self, e: int) -> int:
        k = int(np.searchsorted(self.offset, e, side="right") - 1)
        return int(e - self.offset[k])

    def window_for_horizon(self, T: float, factor: float = 4.0) -> int:
        """Smallest ``N`` with every level-``N`` mass at least ``factor * T``."""
        for level in range(1, self.hi + 1):
            if self.masses(level).min() >= factor * T:
                return level
        raise ValueError(f"horizon {T} needs more than {self.hi} levels")
