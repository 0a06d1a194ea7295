"""Ergodic integrals, deviation exponents and the limit-theorem statistics.

Everything here is driven through a *model*: an object that owns a level
source and knows the spectral quantities needed to normalise (``theta``
values, ``v_2``, ``Phi_f^+`` and ``alpha(f)``).  ``PeriodicModel`` covers a
single graph; the random setting supplies its own model with the same
attributes, so the audits run unchanged on graph sequences.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .adic_flow import AdicFlow, FlowState
from .compactum import PathWindow
from .levels import PeriodicSource
from .observables import (CylinderObservable, DegenerateObservable, alpha as alpha_periodic,
                          integral_against, xi_plus_vector)
from .additive_measures import MinusMeasure, minus_basis, plus_basis
from .graph_core import OrientedGraph
from .ordering import VershikOrdering
from .spectral import SpectralData

ALPHA_TOL = 1e-12
KS_RESOLUTION = 1e-9


class PeriodicModel:
    """A single graph repeated at every level."""

    def __init__(self, g: OrientedGraph, sd: SpectralData, o: VershikOrdering | None = None):
        self.g, self.sd = g, sd
        self.source = PeriodicSource(g, sd, o)
        self.m = g.m
        self.theta1 = sd.theta1
        self.theta2 = sd.theta2
        self.v2 = sd.v2

    def exponents(self) -> list[float]:
        return [float(t) for t in self.sd.expanding_thetas()]

    def mean(self, f: CylinderObservable) -> complex:
        return integral_against(f, MinusMeasure(self.sd.la, self.sd, check=False), self.sd, self.g)

    def xi(self, f: CylinderObservable) -> np.ndarray:
        return xi_plus_vector(f, self.sd, self.g)

    def alpha(self, f: CylinderObservable) -> complex:
        return alpha_periodic(f, self.sd, self.g)

    def time_scale(self, n: int) -> float:
        return math.exp(n * self.theta1)

    def second_scale(self, n: int) -> float:
        return math.exp(n * self.theta2)

    def engine(self, measures=(), observables=(), tol_arc=1e-9, hi=64, seed=0) -> AdicFlow:
        return AdicFlow(self.source, measures, observables, tol_arc=tol_arc, hi=hi, seed=seed)


def _rng(seed):
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


# ---------------------------------------------------------------------------
# ergodic integrals


def ergodic_integral(engine: AdicFlow, item: int, start: FlowState, T, method: str = "fast") -> complex:
    """``int_0^T f(h_t x) dt`` for the observable registered as ``item``.

    ``fast`` crosses whole cells at every level; ``slow`` walks level-1
    cells one at a time and serves as the oracle.
    """
    if T < 0:
        raise ValueError("T must be nonnegative")
    if method == "fast":
        return complex(engine.advance(start, T)[1][item])
    if method == "slow":
        return complex(engine.advance_slow(start, T)[1][item])
    raise ValueError(f"unknown method {method!r}")


@dataclass
class ErgodicRun:
    f: CylinderObservable
    start: FlowState
    checkpoints: list[float]
    integrals: list[complex] = field(default_factory=list)
    cocycle_pred: list[complex] = field(default_factory=list)


def ergodic_run(model, f: CylinderObservable, start_edges, checkpoints, offset=0.0, seed=0) -> ErgodicRun:
    """Integrals of ``f`` and ``Phi_f^+`` along one orbit, cumulated over checkpoints."""
    checkpoints = [float(t) for t in checkpoints]
    if any(b <= a for a, b in zip(checkpoints, checkpoints[1:])) or checkpoints[0] < 0:
        raise ValueError("checkpoints must be increasing and nonnegative")
    eng = model.engine([model.xi(f)], [f], seed=seed)
    st = eng.state(start_edges, offset)
    run = ErgodicRun(f, st, checkpoints)
    total = np.zeros(2, dtype=complex)
    prev = 0.0
    for T in checkpoints:
        st, vals = eng.advance(st, T - prev)
        total = total + vals
        prev = T
        run.cocycle_pred.append(complex(total[0]))
        run.integrals.append(complex(total[1]))
    return run


def oracle_agreement(engine: AdicFlow, item: int, cases: int = 100, t_max: float = 2000.0,
                     N: int | None = None, seed=0) -> float:
    """Largest ``|fast - slow|`` over random ``(x, T)``."""
    rng = _rng(seed)
    N = N or engine.window_for_horizon(t_max)
    P, n, off = engine.sample_batch(cases, N, rng=rng)
    worst = 0.0
    for s in range(cases):
        st = FlowState(PathWindow.from_edges(1, P[s, :n[s]]), off[s, 0], off[s, 1])
        T = float(rng.uniform(0.0, t_max))
        worst = max(worst, abs(ergodic_integral(engine, item, st, T, "fast")
                               - ergodic_integral(engine, item, st, T, "slow")))
    return worst


def _run_grid(engine: AdicFlow, T_grid, samples: int, seed):
    """Cumulative values of every item at each ``T`` for ``samples`` random starts."""
    T_grid = np.asarray(T_grid, dtype=float)
    N = engine.window_for_horizon(float(T_grid[-1]))
    P, n, off = engine.sample_batch(samples, N, rng=_rng(seed))
    out = np.zeros((len(T_grid), samples, engine.n_items), dtype=complex)
    total = np.zeros((samples, engine.n_items), dtype=complex)
    prev = 0.0
    for j, T in enumerate(T_grid):
        total = total + engine.advance_batch(P, n, off, T - prev)
        prev = T
        out[j] = total
    return out


# ---------------------------------------------------------------------------
# error audit


@dataclass
class AuditResult:
    name: str
    T: np.ndarray
    error: np.ndarray
    bound_ratio: np.ndarray
    kendall_tau: float
    p_value: float

    @property
    def passed(self) -> bool:
        """No significant upward trend at the 5% level."""
        return not (self.kendall_tau > 0 and self.p_value < 0.05)

    @property
    def constant(self) -> float:
        return float(np.max(self.bound_ratio))


def mann_kendall(y) -> tuple[float, float]:
    """Kendall's tau of ``y`` against its index, with the two-sided p-value."""
    y = np.asarray(y, dtype=float)
    if np.ptp(y) == 0:
        return 0.0, 1.0
    res = stats.kendalltau(np.arange(len(y)), y)
    return float(res.statistic), float(res.pvalue)


def multiplic_audit(model, observables, T_grid, samples: int = 64, seed=0, power: int | None = None):
    """Per observable: ``max_x |int_0^T f - Phi_f^+(x,T)|`` over the grid, scaled by the log bound."""
    T_grid = np.asarray(T_grid, dtype=float)
    if T_grid[-1] / T_grid[0] < 1e3:
        raise ValueError("T grid must span at least three decades")
    power = model.m + 1 if power is None else power
    observables = list(observables)
    eng = model.engine([model.xi(f) for f in observables], observables, seed=seed)
    vals = _run_grid(eng, T_grid, samples, seed)
    k = len(observables)
    bound = (1.0 + np.log1p(T_grid)) ** power
    results = []
    for i, f in enumerate(observables):
        err = np.max(np.abs(vals[:, :, k + i] - vals[:, :, i]), axis=1)
        ratio = err / bound
        tau, p = mann_kendall(ratio)
        results.append(AuditResult(f.name or f"f{i}", T_grid, err, ratio, tau, p))
    return results


def epsilon_audit(model, f: CylinderObservable, T_grid, eps_values=(0.05, 0.1), samples: int = 64, seed=0):
    """Fitted ``C_eps = max error / (1 + T^eps)`` and the trend test of each scaled column."""
    T_grid = np.asarray(T_grid, dtype=float)
    eng = model.engine([model.xi(f)], [f], seed=seed)
    vals = _run_grid(eng, T_grid, samples, seed)
    err = np.max(np.abs(vals[:, :, 1] - vals[:, :, 0]), axis=1)
    out = {}
    for eps in eps_values:
        ratio = err / (1.0 + T_grid ** eps)
        tau, p = mann_kendall(ratio)
        out[float(eps)] = AuditResult(f"eps={eps}", T_grid, err, ratio, tau, p)
    return out


# ---------------------------------------------------------------------------
# deviation exponent


@dataclass
class SlopeEstimate:
    slope: float
    ci: tuple[float, float]
    T: np.ndarray
    sup_abs: np.ndarray
    degenerate: bool = False

    def within(self, target: float, tol: float) -> bool:
        return abs(self.slope - target) <= tol


def _ols_slope(x, y) -> float:
    return float(np.polyfit(x, y, 1)[0])


def deviation_exponent(model, f: CylinderObservable, T_grid, samples: int = 64, seed=0,
                       n_boot: int = 400, allow_degenerate: bool = False) -> SlopeEstimate:
    """OLS slope of ``log max_x |int_0^T f|`` against ``log T`` with a bootstrap CI.

    Raises ``DegenerateObservable`` when ``f`` is mean-zero with ``alpha(f) = 0``
    unless ``allow_degenerate``; the slope then reflects the lower exponents.
    """
    degenerate = abs(model.mean(f)) < ALPHA_TOL and abs(model.alpha(f)) < ALPHA_TOL
    if degenerate and not allow_degenerate:
        raise DegenerateObservable("alpha(f) = 0")
    T_grid = np.asarray(T_grid, dtype=float)
    eng = model.engine((), [f], seed=seed)
    vals = _run_grid(eng, T_grid, samples, seed)[:, :, 0]
    sup = np.max(np.abs(vals), axis=1)
    x, y = np.log(T_grid), np.log(sup)
    slope = _ols_slope(x, y)
    rng = _rng(seed)
    boots = []
    idx = np.arange(len(x))
    for _ in range(n_boot):
        s = rng.choice(idx, size=len(idx), replace=True)
        if np.ptp(x[s]) > 0:
            boots.append(_ols_slope(x[s], y[s]))
    lo, hi = np.percentile(boots, [2.5, 97.5])
    return SlopeEstimate(slope, (float(lo), float(hi)), T_grid, sup, degenerate)


def eigen_observable(g: OrientedGraph, h, v, name: str = "") -> CylinderObservable:
    """Depth-one observable with ``Phi_f^+ = Phi_v^+``, already exact on level-1 cells.

    ``f = v_{F(x_1)} / h_{F(x_1)}``, so the integral of ``f`` over a level-1
    cell is ``v_{F(x_1)}``; for ``v`` in ``E^+`` the tables of the two agree
    at every level.
    """
    v = np.asarray(v, dtype=complex)
    terms = [((e,), v[g.F[e]] / h[g.F[e]]) for e in range(g.n_edges)]
    return CylinderObservable(tuple(terms), 0.0, name)


# ---------------------------------------------------------------------------
# limit theorem


@dataclass
class LimitReport:
    n_list: list[int]
    tau_grid: np.ndarray
    ks: np.ndarray                  # (len(n_list), len(tau_grid))
    p_values: np.ndarray
    moments_sums: np.ndarray        # (len(n_list), len(tau_grid), 4)
    moments_eta: np.ndarray         # (len(tau_grid), 4)
    modulus: np.ndarray             # C_emp per n
    alpha: complex
    eta_samples: np.ndarray = field(repr=False, default=None)

    def ks_at(self, n: int, tau: float) -> float:
        return float(self.ks[self.n_list.index(n), int(np.argmin(np.abs(self.tau_grid - tau)))])

    def inversions(self) -> int:
        """Times the mean KS over positive ``tau`` goes up as ``n`` grows."""
        cols = self.tau_grid > 0
        mean = self.ks[:, cols].mean(axis=1)
        return int(np.sum(np.diff(mean) > 0))

    def modulus_ratio(self) -> float:
        return float(np.max(self.modulus) / np.min(self.modulus))


def _moments(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return np.array([x.mean(), x.var(), stats.skew(x) if np.ptp(x) > 0 else 0.0,
                     stats.kurtosis(x) if np.ptp(x) > 0 else 0.0])


def _ks(a, b, resolution: float = KS_RESOLUTION) -> tuple[float, float]:
    """Two-sample KS on values snapped to a grid of ``resolution``.

    The limit law can carry atoms (on ``Q_A`` at dyadic ``tau`` it does);
    snapping keeps round-off from splitting an atom between the two samples.
    """
    a = np.round(np.asarray(a, dtype=float) / resolution) * resolution
    b = np.round(np.asarray(b, dtype=float) / resolution) * resolution
    if np.ptp(a) == 0 and np.ptp(b) == 0:
        return (0.0, 1.0) if a[0] == b[0] else (1.0, 0.0)
    res = stats.ks_2samp(a, b)
    return float(res.statistic), float(res.pvalue)


def path_modulus(paths, tau_grid, exponent: float) -> float:
    """``max |S(t2) - S(t1)| / |t2 - t1|^exponent`` over sampled paths and grid pairs."""
    tau = np.asarray(tau_grid, dtype=float)
    i, j = np.triu_indices(len(tau), k=1)
    d = np.abs(paths[:, j] - paths[:, i])
    return float(np.max(d / np.abs(tau[j] - tau[i]) ** exponent))


def _sample_paths(model, eng: AdicFlow, item: int, scale: float, tau_grid, samples: int, rng):
    """Values of ``item`` on ``[x, h_{tau*scale} x)`` for each ``tau``, per sampled ``x``."""
    N = eng.window_for_horizon(scale * float(np.max(tau_grid)))
    P, n, off = eng.sample_batch(samples, N, rng=rng)
    out = np.zeros((samples, len(tau_grid)), dtype=complex)
    total = np.zeros(samples, dtype=complex)
    prev = 0.0
    for j, tau in enumerate(tau_grid):
        dt = float(tau) * scale - prev
        if dt > 0:
            total = total + eng.advance_batch(P, n, off, dt)[:, item]
        prev = float(tau) * scale
        out[:, j] = total
    return out


def limit_distribution_test(model, f: CylinderObservable, n_list, samples: int = 10_000,
                            tau_grid=(0.0, 0.25, 0.5, 1.0), modulus_grid: int = 17,
                            seed=0, eta_samples: int | None = None) -> LimitReport:
    """Normalised sums ``S_n[f,x](tau) / (alpha e^{n theta_2})`` against ``Phi_2^+(x', tau)``.

    Both sides are sampled from the invariant measure with independent
    streams; each ``tau`` is compared by a two-sample KS test.  The path
    modulus uses a uniform grid of ``modulus_grid`` points on ``[0, 1]``.
    """
    a = model.alpha(f)
    if abs(a) < ALPHA_TOL:
        raise DegenerateObservable("alpha(f) = 0")
    tau_grid = np.asarray(tau_grid, dtype=float)
    mgrid = np.linspace(0.0, 1.0, modulus_grid)
    full = np.union1d(tau_grid, mgrid)
    ti = np.searchsorted(full, tau_grid)
    mi = np.searchsorted(full, mgrid)
    streams = np.random.SeedSequence(seed).spawn(len(n_list) + 1)
    exponent = model.theta2 / model.theta1

    eta_eng = model.engine([model.v2], (), seed=seed)
    eta = _sample_paths(model, eta_eng, 0, 1.0, full, eta_samples or samples,
                        np.random.default_rng(streams[-1])).real

    eng = model.engine((), [f], seed=seed)
    ks = np.zeros((len(n_list), len(tau_grid)))
    pv = np.zeros_like(ks)
    mom = np.zeros((len(n_list), len(tau_grid), 4))
    modulus = np.zeros(len(n_list))
    for k, n in enumerate(n_list):
        paths = _sample_paths(model, eng, 0, model.time_scale(n), full, samples,
                              np.random.default_rng(streams[k]))
        norm = paths / (a * model.second_scale(n))
        if np.max(np.abs(norm.imag)) > 1e-6 * max(1.0, np.max(np.abs(norm.real))):
            raise ValueError("normalised sums are not real; alpha(f) and v_2 disagree in phase")
        norm = norm.real
        for j, col in enumerate(ti):
            ks[k, j], pv[k, j] = _ks(norm[:, col], eta[:, col])
            mom[k, j] = _moments(norm[:, col])
        modulus[k] = path_modulus(norm[:, mi], mgrid, exponent)
    mom_eta = np.array([_moments(eta[:, col]) for col in ti])
    return LimitReport(list(n_list), tau_grid, ks, pv, mom, mom_eta, modulus, a, eta)


# ---------------------------------------------------------------------------
# scaling relation


def cell_position(engine: AdicFlow, state: FlowState, level: int) -> float:
    """``Phi_1^+`` of the part of the level-``level`` cell below the point."""
    L = engine.levels
    w = state.window.edges
    if level > len(w):
        raise ValueError("window shorter than the requested level")
    pos = state.offset
    for lvl in range(1, level):
        e = w[lvl - 1]
        g = L.gid[L.row(lvl)]
        v = L.eI[e]
        M = L.masses(lvl)
        for p in range(L.out_ptr[g, v], L.out_ptr[g, v + 1]):
            y = L.out_list[p]
            if y == e:
                break
            pos += M[L.eF[y]]
    return float(pos)


def shifted_state(engine: AdicFlow, state: FlowState, k: int, scale: float) -> FlowState:
    """``sigma^k x`` as a state of an engine whose level-1 cells are this one's level-``k+1`` cells.

    ``scale`` is the mass ratio between the two normalisations.
    """
    pos = cell_position(engine, state, k + 1) / scale
    return FlowState(PathWindow.from_edges(1, state.window.edges[k:]), pos, 0.0)


def scaling_defect(model, f: CylinderObservable, n: int, tau: float, samples: int = 200, seed=0) -> float:
    """Largest ``|S_n[f,x](tau) - sum_i e^{n theta_i} m_i(f) Phi_i^+(sigma^n x, tau)|``.

    Diagonalisable periodic case: the sum runs over the eigenvectors of
    ``E^+`` paired with their dual functionals.
    """
    sd = model.sd
    pb, mb = plus_basis(sd), minus_basis(sd)
    coeffs = [integral_against(f, mi, sd, model.g) for mi in mb]
    eng = model.engine([p.v for p in pb], [f], seed=seed)
    T = tau * model.time_scale(n)
    N = eng.window_for_horizon(T) + n + 2
    rng = _rng(seed)
    P, nn, off = eng.sample_batch(samples, N, rng=rng)
    eig = []
    for p in pb:
        j = int(np.argmax(np.abs(p.v)))
        eig.append(complex((sd.Q @ p.v)[j] / p.v[j]))
    worst = 0.0
    for s in range(samples):
        st = FlowState(PathWindow.from_edges(1, P[s, :N]), off[s, 0], off[s, 1])
        direct = eng.advance(st, T)[1][len(pb)]
        y = shifted_state(eng, st, n, model.time_scale(n))
        phis = eng.advance(y, tau)[1][:len(pb)]
        pred = 0.0
        for c, lam, phi in zip(coeffs, eig, phis):
            pred += c * lam ** n * phi
        worst = max(worst, abs(direct - pred))
    return worst


# ---------------------------------------------------------------------------
# CSV outputs


def _writer():
    buf = io.StringIO()
    return buf, csv.writer(buf, lineterminator="\n")


def audit_csv(results) -> str:
    buf, wr = _writer()
    wr.writerow(["observable", "T[time]", "error[abs]", "bound_ratio[error/(1+log(1+T))^(m+1)]"])
    for r in results:
        for T, e, b in zip(r.T, r.error, r.bound_ratio):
            wr.writerow([r.name, repr(float(T)), repr(float(e)), repr(float(b))])
    return buf.getvalue()


def slope_csv(name: str, est: SlopeEstimate) -> str:
    buf, wr = _writer()
    wr.writerow(["observable", "T[time]", "sup_abs_integral[abs]", "slope[log/log]", "ci_lo", "ci_hi"])
    for T, s in zip(est.T, est.sup_abs):
        wr.writerow([name, repr(float(T)), repr(float(s)), repr(est.slope), repr(est.ci[0]), repr(est.ci[1])])
    return buf.getvalue()


def ks_csv(rep: LimitReport) -> str:
    buf, wr = _writer()
    wr.writerow(["n[level]", "tau[normalised time]", "ks[sup distance]", "p[value]"])
    for k, n in enumerate(rep.n_list):
        for j, tau in enumerate(rep.tau_grid):
            wr.writerow([n, repr(float(tau)), repr(float(rep.ks[k, j])), repr(float(rep.p_values[k, j]))])
    return buf.getvalue()


def moments_csv(rep: LimitReport) -> str:
    buf, wr = _writer()
    wr.writerow(["source", "n[level]", "tau[normalised time]", "mean", "variance", "skewness", "excess_kurtosis"])
    for j, tau in enumerate(rep.tau_grid):
        wr.writerow(["eta", "", repr(float(tau))] + [repr(float(v)) for v in rep.moments_eta[j]])
    for k, n in enumerate(rep.n_list):
        for j, tau in enumerate(rep.tau_grid):
            wr.writerow(["sums", n, repr(float(tau))] + [repr(float(v)) for v in rep.moments_sums[k, j]])
    return buf.getvalue()
