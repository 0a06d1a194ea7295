"""Quick invariant suites, one per module, used by ``adicflow selftest``.

Each suite returns ``Check`` records.  A check passes when its error is
strictly below its tolerance, so injecting a tolerance of 0 makes every
check report a failure.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .additive_measures import (eval_plus, gram_matrix, pairing, pairing_by_cells,
                                plus_basis, minus_basis, shift_equivariance_check)
from .adic_flow import periodic_engine
from .compactum import (PathWindow, PlusSegment, conditional_product_check, cylinders, parry_measure,
                        plus_subcells)
from .graph_core import Q_A, OrientedGraph, count_words, enumerate_words, validate_graph
from .limit_harness import PeriodicModel, oracle_agreement
from .observables import CylinderObservable, mean_zero, xi_plus_by_duality, xi_plus_by_projection
from .random_compacta import (RenormCocycle, SequenceModel, SequenceSpec, lyapunov_spectrum,
                              renormalization_check, sample_sequence)
from .spectral import NoisyVectorSequence, decompose, recover_expanding_vector

Q_B = np.array([[6, 2, 1], [2, 5, 2], [1, 2, 4]])
Q_C = np.array([[2, 1], [1, 2]])


@dataclass(frozen=True)
class Check:
    suite: str
    name: str
    error: float
    tol: float

    @property
    def passed(self) -> bool:
        return bool(self.error < self.tol)


def _graph_core(tol):
    g = OrientedGraph.from_matrix(Q_A)
    return [
        ("validate Q_A", 0.0 if validate_graph(g).ok else 1.0, tol),
        ("word count = sum of Q^k", abs(count_words(g, 4) - int(np.linalg.matrix_power(Q_A, 4).sum())), tol),
        ("enumeration is admissible", float(sum(not g.is_admissible(w) for w in enumerate_words(g, 3))), tol),
    ]


def _spectral(tol):
    out = []
    for name, Q in (("Q_A", Q_A), ("Q_B", Q_B)):
        sd = decompose(Q)
        out.append((f"{name} Perron pair", float(np.abs(Q @ sd.h - sd.rho * sd.h).max()), tol))
        out.append((f"{name} Jordan reconstruction",
                    float(np.abs(sd.basis @ sd.jordan @ sd.dual - Q).max()), tol))
    S = np.array([[2.0, 1.0, 0.0], [0.0, 2.0, 0.0], [0.0, 0.0, 0.5]])    # exact dyadic orbit
    v = np.array([0.25, -1.5, 0.0])
    orbit = np.array([np.linalg.matrix_power(S, n) @ v for n in range(30)])
    rec = recover_expanding_vector(S, NoisyVectorSequence(orbit, 0.0))
    out.append(("noiseless recovery", float(np.abs(rec.v - v).max()), 1e3 * tol))
    return out


def _compactum(tol):
    g = OrientedGraph.from_matrix(Q_A)
    sd = decompose(Q_A)
    total = sum(parry_measure(c, sd, g) for c in cylinders(g, 3))
    worst = 0.0
    for c in cylinders(g, 2, n=1):
        lhs, rhs = conditional_product_check(c, c.witness(), sd, g)
        worst = max(worst, abs(lhs - rhs))
    return [("Parry total mass", abs(total - 1.0), tol), ("conditional product", worst, tol)]


def _additive_measures(tol):
    out = []
    for name, Q in (("Q_A", Q_A), ("Q_B", Q_B)):
        g = OrientedGraph.from_matrix(Q)
        sd = decompose(Q)
        out.append((f"{name} Gram = identity", float(np.abs(gram_matrix(sd) - np.eye(sd.dim_plus)).max()), tol))
        worst = 0.0
        for mu in plus_basis(sd):
            for w in enumerate_words(g, 3):
                seg = PlusSegment(3, PathWindow.from_edges(1, w))
                parts = sum(eval_plus(mu, s, g) for s in plus_subcells(seg, g))
                worst = max(worst, abs(eval_plus(mu, seg, g) - parts))
        out.append((f"{name} additivity", worst, tol))
        p, mi = plus_basis(sd)[0], minus_basis(sd)[0]
        out.append((f"{name} pairing by cells", abs(pairing_by_cells(p, mi, g, k=2) - pairing(p, mi)), tol))
        out.append((f"{name} shift equivariance", shift_equivariance_check(plus_basis(sd)[-1], g), tol))
    return out


def _observables(tol):
    g = OrientedGraph.from_matrix(Q_B)
    sd = decompose(Q_B)
    f = mean_zero(CylinderObservable.indicator((0,)), sd, g)
    return [("Xi by projection = by duality",
             float(np.abs(xi_plus_by_projection(f, sd, g) - xi_plus_by_duality(f, sd, g)).max()), tol)]


def _adic_flow(tol):
    g = OrientedGraph.from_matrix(Q_A)
    sd = decompose(Q_A)
    eng = periodic_engine(g, sd, measures=[sd.h, sd.v2])
    st = eng.minimal_state(6, 0)
    a, va = eng.advance(st, 37.25)
    b, vb = eng.advance(a, 401.5)
    _, vc = eng.advance(st, 438.75)
    back = eng.retreat(eng.flow(st, 438.75), 438.75)
    return [
        ("cocycle identity", float(np.abs(va + vb - vc).max()), tol),
        ("Phi_1 equals elapsed time", abs(float(vc[0].real) - 438.75), tol),
        ("retreat inverts advance", abs(back.offset - st.offset) + float(back.window.edges != st.window.edges), tol),
    ]


def _limit_harness(tol):
    g = OrientedGraph.from_matrix(Q_A)
    model = PeriodicModel(g, decompose(Q_A))
    f = mean_zero(CylinderObservable.indicator((3, 4)), model.source.sd, g)
    eng = model.engine([model.xi(f)], [f])
    return [("fast/slow ergodic integrals", oracle_agreement(eng, 1, cases=20, t_max=500.0), tol)]


def _random_compacta(tol):
    gA, gC = OrientedGraph.from_matrix(Q_A), OrientedGraph.from_matrix(Q_C)
    seq = sample_sequence(SequenceSpec((gA, gC), (0.5, 0.5), seed=3), (-256, 256))
    rc = RenormCocycle(seq)
    const = lyapunov_spectrum(sample_sequence(SequenceSpec.constant(gA), (-256, 256)), N=2000, n_boot=50)
    model = SequenceModel(seq, lyapunov_spectrum(seq, N=2000, n_boot=50))
    return [
        ("cocycle identity", float(rc.cocycle_defect(3, -5) + rc.cocycle_defect(-4, 9)), tol),
        ("transpose cocycle identity", float(rc.transpose_cocycle_defect(4, -7)), tol),
        ("constant-sequence exponents", float(np.abs(const.exponents - [math.log(4), math.log(2)]).max()), tol),
        ("renormalization diagram", renormalization_check(model, cells=10).max_defect, tol),
    ]


SUITES = {
    "graph_core": _graph_core,
    "spectral": _spectral,
    "compactum": _compactum,
    "additive_measures": _additive_measures,
    "observables": _observables,
    "adic_flow": _adic_flow,
    "limit_harness": _limit_harness,
    "random_compacta": _random_compacta,
}

DEFAULT_TOL = 1e-9


def run_suites(names=None, tol: float | None = None) -> list[Check]:
    """Run the named suites (all by default); ``tol`` overrides every tolerance."""
    names = list(SUITES) if not names else list(names)
    unknown = [n for n in names if n not in SUITES]
    if unknown:
        raise KeyError(f"unknown suite(s): {', '.join(unknown)}")
    out = []
    for name in names:
        for label, err, t in SUITES[name](DEFAULT_TOL):
            out.append(Check(name, label, float(err), t if tol is None else tol))
    return out
