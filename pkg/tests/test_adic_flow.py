import csv
import io
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from adicflow.adic_flow import (Arc, FlowState, HorizonExceeded, MaxPathSignal, arc_value, cocycle, flow,
                                hoelder_probe, loglog_slope, periodic_engine, predecessor, successor,
                                tower_height)
from adicflow.compactum import PathWindow
from adicflow.graph_core import OrientedGraph, enumerate_words
from adicflow.observables import CylinderObservable
from adicflow.ordering import VershikOrdering
from adicflow.spectral import decompose

from conftest import Q_B


@pytest.fixture(scope="module")
def ordA(gA):
    return VershikOrdering.by_edge_id(gA)


@pytest.fixture(scope="module")
def engA(gA, sdA):
    # items: Phi_1, Phi_(1,-1)
    return periodic_engine(gA, sdA, measures=[sdA.h, np.array([1.0, -1.0])])


def test_successor_increments_lowest(gA, ordA):
    w = PathWindow.from_edges(1, (0, 4, 3))
    assert successor(w, ordA, gA).edges == (1, 4, 3)


def test_successor_carry(gA, ordA):
    # x_1 = 3 is maximal among edges leaving vertex 0; x_2 = 4 steps to 5 and x_1 resets to
    # the minimal edge leaving F(5) = 1, which is 4
    w = PathWindow.from_edges(1, (3, 4, 3))
    assert successor(w, ordA, gA).edges == (4, 5, 3)


def test_successor_all_maximal(gA, ordA):
    w = PathWindow.from_edges(1, (7, 7, 7))
    with pytest.raises(MaxPathSignal):
        successor(w, ordA, gA)


def test_predecessor_inverts(gA, ordA):
    for w in enumerate_words(gA, 3):
        x = PathWindow.from_edges(1, tuple(reversed(w)))
        if not x.is_admissible(gA):
            continue
        try:
            y = successor(x, ordA, gA)
        except MaxPathSignal:
            continue
        assert predecessor(y, ordA, gA) == x


@pytest.mark.parametrize("N", [3, 4, 5, 6])
def test_successor_enumerates_all_paths(gB, N):
    o = VershikOrdering.by_edge_id(gB)
    words = enumerate_words(gB, N)
    for v in range(gB.m):
        top = [w for w in words if gB.I[w[-1]] == v]
        x = min((PathWindow.from_edges(1, w) for w in top), key=lambda p: tuple(o.rank(e) for e in reversed(p.edges)))
        seen = {x.edges}
        while True:
            try:
                x = successor(x, o, gB)
            except MaxPathSignal:
                break
            if gB.I[x.edges[-1]] != v:
                break
            assert x.edges not in seen
            seen.add(x.edges)
        assert len(seen) == len(top)


def test_zero_time(engA):
    st_ = engA.minimal_state(4, 0)
    assert flow(engA, st_, 0.0) == st_
    assert cocycle(engA, 1, st_, 0.0) == 0


def test_single_event(engA):
    st_ = engA.minimal_state(3, 0)
    nxt, vals = engA.advance(st_, 1.0)
    assert nxt.offset == 0.0
    assert nxt.window.edges[0] == st_.window.edges[0] + 1
    assert vals[1] == pytest.approx(1.0)


@pytest.mark.parametrize("n", [1, 2, 3, 4, 5, 6])
def test_tower_exhaustion(engA, n):
    for v in (0, 1):
        st_ = engA.minimal_state(n, v)
        T = tower_height(engA, n, v)
        assert T == 4.0 ** (n - 1)
        end, vals = engA.advance(st_, T)
        assert end.offset == 0.0
        assert end.window.edges[n - 1] != st_.window.edges[n - 1]
        # whole-cell value of (1,-1): (Q^(n-1) v)_v = +-2^(n-1)
        assert vals[1] == pytest.approx((1 if v == 0 else -1) * 2.0 ** (n - 1), abs=1e-9)
        assert vals[0] == T


def test_arc_examples(engA):
    st_ = engA.minimal_state(3, 0)
    assert st_.window.edges[0] == 0
    assert arc_value(engA, 1, Arc(st_, 1.0)) == pytest.approx(1.0, abs=1e-12)
    # first three cells end at vertex 0, the fourth (edge 3) ends at vertex 1
    st3 = engA.advance(st_, 3.0)[0]
    assert st3.window.edges[0] == 3
    st4 = engA.advance(st3, 1.0)[0]
    two = engA.advance(engA.advance(st_, 2.0)[0], 0.0)[0]
    assert arc_value(engA, 1, Arc(engA.advance(st_, 2.0)[0], 2.0)) == pytest.approx(0.0, abs=1e-12)
    assert st4.window.edges[0] != 3 and two.offset == 0.0
    assert arc_value(engA, 0, Arc(st_, 17.3)) == pytest.approx(17.3, abs=1e-12)


def test_cocycle_identity_random(engA):
    rng = np.random.default_rng(5)
    P, n, off = engA.sample_batch(1000, 14, rng=rng)
    # dyadic times so that t + s is exact; the (1,-1) measure is only 1/2-Hoelder in time
    t = rng.integers(0, 500 * 1024, 1000) / 1024
    s = rng.integers(0, 500 * 1024, 1000) / 1024
    a = engA.advance_batch(P.copy(), n.copy(), off.copy(), t + s)
    P2, n2, off2 = P.copy(), n.copy(), off.copy()
    b = engA.advance_batch(P2, n2, off2, t)
    c = engA.advance_batch(P2, n2, off2, s)
    assert np.abs(a - b - c).max() <= 2 * engA.tol_arc


def test_finite_additivity_on_arcs(engA):
    rng = np.random.default_rng(11)
    for _ in range(50):
        st_ = engA.state(tuple(engA.minimal_state(12, int(rng.integers(2))).window.edges), 0.0)
        cuts = np.sort(rng.integers(0, 3000 * 256, int(rng.integers(1, 5)))) / 256
        total = arc_value(engA, 1, Arc(st_, float(cuts[-1])))
        parts, cur, prev = 0.0, st_, 0.0
        for c in cuts:
            cur, v = engA.advance(cur, float(c - prev))
            parts += v[1]
            prev = c
        assert abs(parts - total) <= len(cuts) * engA.tol_arc


def test_negative_time(engA):
    st_ = engA.minimal_state(10, 1)
    fwd = engA.flow(st_, 123.625)
    back = engA.retreat(fwd, 123.625)
    assert back.window.edges == st_.window.edges and back.offset == st_.offset
    assert cocycle(engA, 1, fwd, -123.625) == pytest.approx(-cocycle(engA, 1, st_, 123.625), abs=1e-9)


def test_pinned_window_hits_horizon(engA):
    st_ = engA.state((7, 7, 7), 0.0, pinned=True)
    with pytest.raises(HorizonExceeded):
        engA.advance(st_, 100.0)


def test_boundary_states_have_zero_offset(engA):
    st_ = engA.minimal_state(5, 0)
    for k in range(1, 40):
        s2 = engA.flow(st_, float(k))
        assert s2.offset == 0.0


def test_hoelder_slopes(engA):
    t = [4.0 ** -k for k in range(2, 11)]
    one = hoelder_probe(engA, 0, 200, t, N=8, rng=1)
    assert [r[1] for r in one] == pytest.approx(t, rel=1e-9)
    two = hoelder_probe(engA, 1, 2000, t, N=8, rng=2)
    assert abs(loglog_slope(two) - 0.5) <= 0.05
    # the envelope at t = 4^-k is |Q^-k v| = 2^-k
    for (tt, sup) in two:
        assert sup <= 2.0 * math.sqrt(tt) + 1e-12


def test_nonconstant_at_unit_time(engA):
    P, n, off = engA.sample_batch(1000, 10, rng=3)
    vals = engA.advance_batch(P, n, off, 1.0)[:, 1]
    assert np.var(vals.real) > 0.01


def test_measure_preservation(gA, sdA):
    """Occupation of depth-2 cylinders along orbits matches nu = 1/32."""
    eng = periodic_engine(gA, sdA, observables=[CylinderObservable.indicator(w) for w in enumerate_words(gA, 2)])
    P, n, off = eng.sample_batch(16, 14, rng=7)
    T = 4.0 ** 10
    freq = eng.advance_batch(P, n, off, T).real.mean(axis=0) / T
    # log-error bound from the multiplicative theorem, generous constant
    assert np.abs(freq - 1 / 32).max() <= 3 * (1 + math.log(1 + T)) ** 3 / T + 1e-3


def test_trace_csv(engA):
    text = engA.trace_csv(engA.minimal_state(4, 0), 6, labels=["phi1", "phi2"])
    rows = list(csv.reader(io.StringIO(text)))
    assert len(rows) == 7
    assert [r[0] for r in rows[1:]] == [str(k) for k in range(6)]
    # each row records the totals on entering the cell; Phi_1 grows by one per level-1 cell on Q_A
    assert [float(r[3]) for r in rows[1:]] == pytest.approx([0, 1, 2, 3, 4, 5])
    assert float(rows[-1][1]) == pytest.approx(5.0)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2000 * 64), st.integers(0, 2000 * 64), st.integers(0, 7))
def test_cocycle_property_q_b(t, s, seed):
    t, s = t / 64, s / 64
    g, sd = OrientedGraph.from_matrix(Q_B), decompose(Q_B)
    eng = _engine_b(g, sd)
    P, n, off = eng.sample_batch(1, 10, rng=seed)
    st_ = FlowState(PathWindow.from_edges(1, P[0, :10]), off[0, 0], 0.0)
    a, va = eng.advance(st_, t)
    _, vb = eng.advance(a, s)
    _, vc = eng.advance(st_, t + s)
    assert np.abs(va + vb - vc).max() <= 2 * eng.tol_arc


_CACHE = {}


def _engine_b(g, sd):
    if "b" not in _CACHE:
        _CACHE["b"] = periodic_engine(g, sd, measures=list(sd.E_plus_basis.T))
    return _CACHE["b"]
