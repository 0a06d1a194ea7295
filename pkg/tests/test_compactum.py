import json
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from adicflow.compactum import (Cylinder, MinusSegment, PathWindow, PlusSegment, WindowTooShort,
                                conditional_product_check, cylinders, extend_down, extend_up,
                                minus_subcells, parry_measure, phi1_minus, phi1_plus, plus_subcells,
                                sample_parry)
from adicflow.graph_core import OrientedGraph, enumerate_words
from adicflow.spectral import decompose

from conftest import Q_B


def test_single_edge_cylinders(gA, sdA):
    vals = [parry_measure(c, sdA, gA) for c in cylinders(gA, 1)]
    assert vals == [0.125] * 8
    assert sum(vals) == 1.0


def test_two_edge_cylinders(gA, sdA):
    vals = [parry_measure(c, sdA, gA) for c in cylinders(gA, 2)]
    assert len(vals) == 32 and set(vals) == {1 / 32}


def test_all_ones_matrix():
    Q = np.array([[1, 1], [1, 1]])
    g, sd = OrientedGraph.from_matrix(Q), decompose(Q)
    assert [parry_measure(c, sd, g) for c in cylinders(g, 1)] == pytest.approx([0.25] * 4, abs=1e-15)
    c = cylinders(g, 1)[0]
    lhs, rhs = conditional_product_check(c, c.witness(), sd, g)
    assert lhs == pytest.approx(0.25, abs=1e-15) and rhs == pytest.approx(0.25, abs=1e-15)


@pytest.mark.parametrize("n,value", [(1, 1.0), (3, 16.0), (0, 0.25)])
def test_phi1_plus(gA, sdA, n, value):
    x = PathWindow.from_edges(n, (3, 4))
    assert phi1_plus(PlusSegment(n, x), sdA, gA) == pytest.approx(value, rel=1e-14)


@pytest.mark.parametrize("n,value", [(0, 0.5), (2, 1 / 32), (-1, 2.0)])
def test_phi1_minus(gA, sdA, n, value):
    x = PathWindow.from_edges(n - 1, (3, 4))
    assert phi1_minus(MinusSegment(n, x), sdA, gA) == pytest.approx(value, rel=1e-14)


@pytest.mark.parametrize("k", [1, 2, 3])
def test_conditional_product(gA, sdA, k):
    for c in cylinders(gA, k, n=2):
        lhs, rhs = conditional_product_check(c, c.witness(), sdA, gA)
        assert abs(lhs - rhs) <= 1e-15
        assert lhs == pytest.approx(1 / (8 * 4 ** (k - 1)), rel=1e-14)


def test_window_too_short(gA, sdA):
    c = Cylinder(2, (3, 4))
    with pytest.raises(WindowTooShort):
        conditional_product_check(c, PathWindow.from_edges(1, (3,)), sdA, gA)


def test_json_round_trip():
    w = PathWindow.from_edges(-2, (0, 4, 3))
    assert PathWindow.from_dict(json.loads(json.dumps(w.to_dict()))) == w
    c = Cylinder(5, (0, 4, 3))
    assert Cylinder.from_dict(json.loads(json.dumps(c.to_dict()))) == c
    assert w.to_dict() == {"lo": -2, "hi": 0, "edges": [0, 4, 3]}


def test_sampling_one_edge_marginal(gA, sdA):
    rng = np.random.default_rng(0)
    counts = Counter(sample_parry(gA, sdA, (0, 0), rng).edges[0] for _ in range(20_000))
    obs = np.array([counts[e] for e in range(8)])
    assert stats.chisquare(obs).pvalue > 1e-3


def test_sampling_two_edge_marginal(gA, sdA):
    rng = np.random.default_rng(1)
    counts = Counter(sample_parry(gA, sdA, (3, 4), rng).edges for _ in range(32_000))
    assert len(counts) == 32
    assert stats.chisquare(np.array(list(counts.values()))).pvalue > 1e-3


def test_sampling_reproducible(gA, sdA):
    a = sample_parry(gA, sdA, (-3, 5), 42)
    assert a == sample_parry(gA, sdA, (-3, 5), 42)
    assert a.is_admissible(gA)


def test_extensions_admissible(gA, sdA):
    rng = np.random.default_rng(3)
    w = sample_parry(gA, sdA, (0, 2), rng)
    up = extend_up(w, gA, sdA, 4, rng)
    down = extend_down(up, gA, sdA, 3, rng)
    assert down.lo == -3 and down.hi == 6 and down.is_admissible(gA)
    assert down.word(0, 2) == w.edges


@pytest.mark.parametrize("n", [1, 2, 3, 4])
def test_plus_refinement_counts(gA, n):
    for w in enumerate_words(gA, 2):
        seg = PlusSegment(n + 1, PathWindow.from_edges(n + 1, w))
        f = int(gA.F[w[0]])
        subs = plus_subcells(seg, gA)
        assert len(subs) == int(np.array([[3, 1], [1, 3]])[f].sum())


def test_phi1_additivity(gB, sdB):
    for w in enumerate_words(gB, 2):
        for n in range(-1, 4):
            seg = PlusSegment(n + 1, PathWindow.from_edges(n + 1, w))
            parts = sum(phi1_plus(s, sdB, gB) for s in plus_subcells(seg, gB))
            assert parts == pytest.approx(phi1_plus(seg, sdB, gB), rel=1e-12)
            mseg = MinusSegment(n, PathWindow.from_edges(n - 1, w))
            mparts = sum(phi1_minus(s, sdB, gB) for s in minus_subcells(mseg, gB))
            assert mparts == pytest.approx(phi1_minus(mseg, sdB, gB), rel=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 3), st.integers(-5, 5), st.data())
def test_parry_shift_compatible(k, n, data):
    g = OrientedGraph.from_matrix(Q_B)
    sd = decompose(Q_B)
    w = data.draw(st.sampled_from(enumerate_words(g, k)))
    assert parry_measure(Cylinder(n, w), sd, g) == parry_measure(Cylinder(0, w), sd, g)
    lhs, rhs = conditional_product_check(Cylinder(n, w), Cylinder(n, w).witness(), sd, g)
    assert lhs == pytest.approx(rhs, rel=1e-12)
