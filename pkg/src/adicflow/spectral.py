"""Spectral data of an incidence matrix and the expanding-vector recovery.

All vector norms are l1 norms, ``|v| = sum |v_i|``, and matrix norms are the
induced ones.  The splitting ``C^m = E+ (+) E-`` puts Jordan cells with
``|eigenvalue| > 1`` into ``E+`` and the rest into ``E-``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import sympy

from .graph_core import is_primitive

UNIT_BAND = 1e-8


class SpectralError(ValueError):
    pass


class NonPrimitive(SpectralError):
    pass


class NonExpanding(SpectralError):
    pass


class IllConditioned(SpectralError):
    pass


class SeriesDiverges(SpectralError):
    pass


def l1(v) -> float:
    return float(np.sum(np.abs(v)))


def l1_operator_norm(A) -> float:
    """Norm induced by the l1 vector norm: the largest column sum."""
    A = np.atleast_2d(A)
    if A.size == 0:
        return 0.0
    return float(np.max(np.sum(np.abs(A), axis=0)))


def _normalize_phase(v, tol=1e-12):
    """Scale to unit l1 norm with the first non-negligible entry real positive."""
    v = np.asarray(v, dtype=complex)
    v = v / l1(v)
    big = np.flatnonzero(np.abs(v) > tol * np.max(np.abs(v)) + 1e-300)
    z = v[big[0]]
    return v * (abs(z) / z)


@dataclass(frozen=True)
class Eigenvalue:
    value: complex
    multiplicity: int
    blocks: tuple[int, ...]

    @property
    def modulus(self) -> float:
        return abs(self.value)


def _svd_null(A, tol):
    """Orthonormal basis of the numerical kernel of ``A``."""
    A = np.atleast_2d(A)
    n = A.shape[1]
    if A.shape[0] == 0:
        return np.eye(n, dtype=complex)
    _, s, vh = np.linalg.svd(A)
    scale = max(1.0, s[0] if s.size else 0.0)
    rank = int(np.sum(s > tol * scale))
    return vh[rank:].conj().T


def _rank(A, tol):
    if A.size == 0:
        return 0
    s = np.linalg.svd(A, compute_uv=False)
    scale = max(1.0, s[0])
    return int(np.sum(s > tol * scale))


def _orth(A, tol=1e-10):
    if A.shape[1] == 0:
        return A
    u, s, _ = np.linalg.svd(A, full_matrices=False)
    r = int(np.sum(s > tol * max(1.0, s[0])))
    return u[:, :r]


def _cluster(values, tol):
    """Group numerically equal eigenvalues; returns list of (mean, count)."""
    vals = list(values)
    groups = []
    used = [False] * len(vals)
    for i, z in enumerate(vals):
        if used[i]:
            continue
        members = [z]
        used[i] = True
        for j in range(i + 1, len(vals)):
            if not used[j] and abs(vals[j] - z) <= tol * max(1.0, abs(z)):
                members.append(vals[j])
                used[j] = True
        groups.append((complex(np.mean(members)), len(members)))
    return groups


def _jordan_chains(Q, lam, a, tol):
    """Jordan chains of ``Q`` at eigenvalue ``lam`` with algebraic multiplicity ``a``.

    Returns ``(vectors, block_sizes)``; each chain is listed eigenvector first.
    """
    m = Q.shape[0]
    N = Q - lam * np.eye(m)
    G = _svd_null(np.linalg.matrix_power(N, a), tol)
    if G.shape[1] != a:
        raise IllConditioned(f"generalized eigenspace of {lam:.6g} has dimension {G.shape[1]} != {a}")
    Nr = G.conj().T @ N @ G
    pw = [np.eye(a, dtype=complex)]
    for _ in range(a):
        pw.append(pw[-1] @ Nr)
    ranks = [_rank(p, tol) for p in pw]
    at_least = [0] + [ranks[s - 1] - ranks[s] for s in range(1, a + 1)] + [0]
    chains = []
    for s in range(a, 0, -1):
        n_new = at_least[s] - at_least[s + 1]
        if n_new <= 0:
            continue
        K = _svd_null(pw[s], tol)
        spans = [_svd_null(pw[s - 1], tol)] if s > 1 else []
        spans += [(pw[t - s] @ u)[:, None] for t, u in chains]
        W = _orth(np.hstack(spans)) if spans else np.zeros((a, 0), complex)
        R = K - W @ (W.conj().T @ K)
        u, sv, _ = np.linalg.svd(R, full_matrices=False)
        if np.sum(sv > tol) < n_new:
            raise IllConditioned(f"cannot resolve Jordan chains at {lam:.6g}")
        for k in range(n_new):
            chains.append((s, u[:, k]))
    vectors, sizes = [], []
    for s, u in chains:
        sizes.append(s)
        for j in range(s - 1, -1, -1):
            vectors.append(G @ (pw[j] @ u))
    return vectors, tuple(sizes)


def _exact_unit_roots(Q) -> bool:
    """True when the characteristic polynomial has a root of unity (integer Q only)."""
    x = sympy.Symbol("x")
    p = sympy.Matrix(Q.astype(int).tolist()).charpoly(x).as_expr()
    for k in range(1, 13):
        if sympy.degree(sympy.gcd(p, x**k - 1), x) > 0:
            return True
    return False


def _charpoly_check(Q, eigs, tol):
    """Compare numerical eigenvalues and multiplicities with the exact polynomial."""
    x = sympy.Symbol("x")
    poly = sympy.Poly(sympy.Matrix(Q.astype(int).tolist()).charpoly(x).as_expr(), x)
    exact = []
    for factor, mult in poly.sqf_list()[1]:
        for r in sympy.Poly(factor, x).nroots(n=30):
            exact.append((complex(r), mult))
    for ev in eigs:
        hits = [mu for z, mu in exact if abs(z - ev.value) <= 1e3 * tol * max(1.0, abs(z))]
        if not hits or hits[0] != ev.multiplicity:
            raise IllConditioned(f"eigenvalue {ev.value:.6g} disagrees with characteristic polynomial")


@dataclass(frozen=True, eq=False)
class SpectralData:
    """Perron data and the expanding/contracting splittings of ``Q`` and ``Q^t``.

    ``basis`` holds Jordan-basis columns (E+ first, each scaled to unit l1
    norm); ``dual`` holds the rows of its inverse, so ``dual[:r].T`` is the
    dual basis of ``Et+``.
    """

    Q: np.ndarray
    theta1: float
    h: np.ndarray
    la: np.ndarray
    eigenvalues: tuple[Eigenvalue, ...]
    basis: np.ndarray
    jordan: np.ndarray
    dual: np.ndarray
    dim_plus: int
    column_eigenvalue: tuple[complex, ...]
    theta2: float | None = None
    rho: float = 0.0
    v2: np.ndarray | None = None
    vt2: np.ndarray | None = None
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def m(self) -> int:
        return self.Q.shape[0]

    @property
    def E_plus_basis(self) -> np.ndarray:
        return self.basis[:, :self.dim_plus]

    @property
    def E_minus_basis(self) -> np.ndarray:
        return self.basis[:, self.dim_plus:]

    @property
    def Et_plus_basis(self) -> np.ndarray:
        return self.dual[:self.dim_plus].T

    @property
    def Et_minus_basis(self) -> np.ndarray:
        return self.dual[self.dim_plus:].T

    @property
    def P_plus(self) -> np.ndarray:
        return self.E_plus_basis @ self.dual[:self.dim_plus]

    @property
    def P_minus(self) -> np.ndarray:
        return self.E_minus_basis @ self.dual[self.dim_plus:]

    def expanding_thetas(self) -> list[float]:
        """``log|eigenvalue|`` of each E+ cell, largest first, with multiplicity."""
        out = []
        for ev in self.eigenvalues:
            if ev.modulus > 1:
                out += [math.log(ev.modulus)] * ev.multiplicity
        return out

    def _jplus_power(self, n: int) -> np.ndarray:
        key = ("J+", n)
        if key not in self._cache:
            Jp = self.jordan[:self.dim_plus, :self.dim_plus]
            if n >= 0:
                P = np.linalg.matrix_power(Jp, n)
            else:
                P = np.linalg.matrix_power(np.linalg.inv(Jp), -n)
            self._cache[key] = P
        return self._cache[key]

    def plus_coords(self, v) -> np.ndarray:
        return self.dual[:self.dim_plus] @ np.asarray(v, dtype=complex)

    def minus_coords(self, vt) -> np.ndarray:
        return self.basis[:, :self.dim_plus].T @ np.asarray(vt, dtype=complex)

    def power_plus(self, v, n: int) -> np.ndarray:
        """``Q^n v`` for ``v`` in E+ and any integer ``n``."""
        return self.E_plus_basis @ (self._jplus_power(n) @ self.plus_coords(v))

    def power_plus_t(self, vt, n: int) -> np.ndarray:
        """``(Q^t)^n vt`` for ``vt`` in Et+ and any integer ``n``."""
        return self.Et_plus_basis @ (self._jplus_power(n).T @ self.minus_coords(vt))

    def in_plus(self, v, tol=1e-9) -> bool:
        v = np.asarray(v, dtype=complex)
        return l1(v - self.P_plus @ v) <= tol * max(1.0, l1(v))

    def in_plus_t(self, vt, tol=1e-9) -> bool:
        vt = np.asarray(vt, dtype=complex)
        return l1(vt - self.P_plus.T @ vt) <= tol * max(1.0, l1(vt))

    def to_dict(self) -> dict:
        def cvec(a):
            return [[float(z.real), float(z.imag)] for z in np.ravel(a)]

        def cmat(A):
            return [cvec(col) for col in np.asarray(A).T]

        return {
            "Q": self.Q.tolist(),
            "theta1": self.theta1,
            "h": [float(x) for x in self.h],
            "la": [float(x) for x in self.la],
            "theta2": self.theta2,
            "v2": None if self.v2 is None else cvec(self.v2),
            "vt2": None if self.vt2 is None else cvec(self.vt2),
            "eigenvalues": [
                {"value": [ev.value.real, ev.value.imag], "multiplicity": ev.multiplicity,
                 "blocks": list(ev.blocks)} for ev in self.eigenvalues],
            "E_plus_basis": cmat(self.E_plus_basis),
            "E_minus_basis": cmat(self.E_minus_basis),
            "Et_plus_basis": cmat(self.Et_plus_basis),
            "Et_minus_basis": cmat(self.Et_minus_basis),
        }


def _exact_perron(Q, rho_float):
    """Rational Perron data when the Perron root of an integer matrix is an integer."""
    k = int(round(rho_float))
    if abs(rho_float - k) > 1e-6 or k < 1:
        return None
    M = sympy.Matrix(Q.astype(int).tolist())
    if (M - k * sympy.eye(M.shape[0])).det() != 0:
        return None
    hv = (M - k * sympy.eye(M.shape[0])).nullspace()
    lv = (M.T - k * sympy.eye(M.shape[0])).nullspace()
    if len(hv) != 1 or len(lv) != 1:
        return None
    h, la = hv[0], lv[0]
    la = la / sum(la)
    h = h / (la.T * h)[0]
    return float(k), np.array([float(x) for x in h]), np.array([float(x) for x in la])


def perron_pair(Q):
    """Perron root and positive vectors normalized by ``sum la = 1, sum la*h = 1``.

    Integer matrices with an integer Perron root get exact rational vectors,
    so cell masses such as ``h = (1, 1)`` are represented without rounding.
    """
    Qi = np.asarray(Q)
    Q = Qi.astype(float)
    w = np.linalg.eigvals(Q)
    rho = float(np.max(w.real))
    if np.all(np.equal(np.mod(Qi, 1), 0)):
        exact = _exact_perron(Qi, rho)
        if exact is not None:
            return exact
    m = Q.shape[0]
    shift = np.linalg.inv(Q - (rho + 1e-9 * max(1.0, rho)) * np.eye(m))
    h = np.ones(m)
    la = np.ones(m)
    for _ in range(3):
        h = shift @ h
        h = h / h.sum()
        la = shift.T @ la
        la = la / la.sum()
    if np.any(h <= 0) or np.any(la <= 0):
        raise NonPrimitive("Perron vector is not strictly positive")
    rho = float(la @ Q @ h / (la @ h))
    h = h / (la @ h)
    return rho, h, la


def decompose(Q, tol: float = 1e-9, periodic: bool = True) -> SpectralData:
    """Spectral data of an integer incidence matrix.

    Raises ``NonPrimitive`` for non-primitive ``Q`` (when ``periodic``),
    ``NonExpanding`` when no eigenvalue exceeds 1 in modulus and
    ``IllConditioned`` when an eigenvalue sits in the band around the unit
    circle or the Jordan basis cannot be certified.
    """
    Qi = np.asarray(Q)
    Q = Qi.astype(float)
    m = Q.shape[0]
    integer = np.all(np.equal(np.mod(Qi, 1), 0))
    if periodic and not is_primitive(Qi):
        raise NonPrimitive("incidence matrix is not primitive")
    raw = np.linalg.eigvals(Q)
    if max(abs(raw)) <= 1 + UNIT_BAND:
        raise NonExpanding("spectral radius <= 1: expanding space is trivial")
    groups = _cluster(raw, 1e-5)
    near_unit = [z for z, _ in groups if abs(abs(z) - 1) < 1e-6]
    if near_unit and not (integer and _exact_unit_roots(Qi)):
        raise IllConditioned(f"eigenvalue {near_unit[0]:.10g} within the band around the unit circle")
    groups.sort(key=lambda g: (-abs(g[0]), -g[0].real, -g[0].imag))

    eigs, cols, col_ev = [], [], []
    for lam, a in groups:
        lam_clean = complex(lam.real, 0.0) if abs(lam.imag) < 1e-12 else lam
        vecs, blocks = _jordan_chains(Q, lam_clean, a, 1e-7)
        eigs.append(Eigenvalue(lam_clean, a, blocks))
        cols += [_normalize_phase(v) for v in vecs]
        col_ev += [lam_clean] * a
    if integer and m <= 4:
        _charpoly_check(Qi, eigs, tol)

    B = np.column_stack(cols)
    if np.linalg.cond(B) > 1e10:
        raise IllConditioned("Jordan basis is numerically singular")
    Binv = np.linalg.inv(B)
    J = Binv @ Q @ B
    J[np.abs(J) < 1e-11] = 0.0
    if l1_operator_norm(Q - B @ J @ Binv) > max(tol, 1e-12) * max(1.0, l1_operator_norm(Q)):
        raise IllConditioned("Jordan reconstruction failed")
    r = sum(ev.multiplicity for ev in eigs if ev.modulus > 1)

    rho, h, la = perron_pair(Qi)
    theta1 = math.log(rho)

    theta2 = v2 = vt2 = None
    if len(eigs) > 1:
        second = eigs[1]
        tied = [ev for ev in eigs[1:] if abs(ev.modulus - second.modulus) < 1e-9]
        if (len(tied) == 1 and second.multiplicity == 1 and abs(second.value.imag) < 1e-12
                and second.value.real > 1):
            theta2 = math.log(second.value.real)
            k = col_ev.index(second.value)
            v2 = np.real(B[:, k]).copy()
            vt2 = np.real(Binv[k]).copy()
    return SpectralData(Q=Qi.copy(), theta1=theta1, h=h, la=la, eigenvalues=tuple(eigs),
                        basis=B, jordan=J, dual=Binv, dim_plus=r, column_eigenvalue=tuple(col_ev),
                        theta2=theta2, rho=rho, v2=v2, vt2=vt2)


def project_plus(sd: SpectralData, v) -> np.ndarray:
    """Component of ``v`` in E+ along E-."""
    return sd.P_plus @ np.asarray(v, dtype=complex)


def project_minus(sd: SpectralData, v) -> np.ndarray:
    return sd.P_minus @ np.asarray(v, dtype=complex)


# ---------------------------------------------------------------------------
# recovery of an expanding vector from a noisy orbit


@dataclass
class NoisyVectorSequence:
    v: np.ndarray
    delta: float

    def __post_init__(self):
        self.v = np.asarray(self.v, dtype=complex)
        if self.v.ndim != 2:
            raise ValueError("sequence must be an (N+1) x m array")

    def defects(self, S) -> np.ndarray:
        S = np.asarray(S, dtype=complex)
        return np.array([l1(S @ self.v[n] - self.v[n + 1]) for n in range(len(self.v) - 1)])


@dataclass(frozen=True)
class ExpandingSplit:
    """Invariant splitting ``V = V+ (+) V-`` of a general operator."""

    S: np.ndarray
    plus: np.ndarray     # orthonormal basis of V+
    minus: np.ndarray    # orthonormal basis of V-
    P_plus: np.ndarray
    P_minus: np.ndarray

    @property
    def dim(self) -> int:
        return self.S.shape[0]

    @property
    def dim_plus(self) -> int:
        return self.plus.shape[1]

    def restricted(self) -> np.ndarray:
        """Matrix of ``S`` on V+ in the ``plus`` basis."""
        return self.plus.conj().T @ self.S @ self.plus


def expanding_split(S) -> ExpandingSplit:
    """Split via reordered Schur forms; robust for defective ``S``."""
    S = np.asarray(S, dtype=complex)
    n = S.shape[0]
    ev = np.linalg.eigvals(S)
    if np.any(np.abs(np.abs(ev) - 1) < UNIT_BAND):
        near = ev[np.argmin(np.abs(np.abs(ev) - 1))]
        if abs(abs(near) - 1) > 1e-14:
            raise IllConditioned(f"eigenvalue {near:.10g} within the band around the unit circle")
    _, Zp, kp = sla.schur(S, output="complex", sort=lambda z: abs(z) > 1 + 1e-14)
    _, Zm, km = sla.schur(S, output="complex", sort=lambda z: abs(z) <= 1 + 1e-14)
    plus, minus = Zp[:, :kp], Zm[:, :km]
    if kp + km != n:
        raise IllConditioned("splitting does not span the space")
    B = np.hstack([plus, minus])
    if np.linalg.cond(B) > 1e10:
        raise IllConditioned("splitting subspaces are numerically dependent")
    Binv = np.linalg.inv(B)
    P_plus = plus @ Binv[:kp]
    P_minus = minus @ Binv[kp:]
    return ExpandingSplit(S, plus, minus, P_plus, P_minus)


@dataclass(frozen=True)
class Recovery:
    v: np.ndarray
    certificate: float
    deviations: np.ndarray
    terms: int


def recover_expanding_vector(S, seq: NoisyVectorSequence, tol: float = 1e-12,
                             max_terms: int = 64, split: ExpandingSplit | None = None) -> Recovery:
    """Unique ``v`` in V+ whose orbit shadows ``seq``.

    ``v = u+(0) + S^-1 u+(1) + S^-2 u+(2) + ...`` with ``u(0) = v(0)`` and
    ``u(n+1) = v(n+1) - S v(n)``.  The certificate is
    ``max_n |S^n v - v(n)| / (delta * max(n,1)^(dim V - dim V+ + 1))``.
    """
    S = np.asarray(S, dtype=complex)
    sp = split or expanding_split(S)
    V = seq.v
    defects = seq.defects(S)
    if defects.size and defects.max() > seq.delta * (1 + 1e-9) + 1e-12:
        raise ValueError(f"sequence defect {defects.max():.3g} exceeds delta {seq.delta:.3g}")
    if sp.dim_plus == 0:
        return Recovery(np.zeros(sp.dim, complex), 0.0, np.array([l1(x) for x in V]), 0)

    R = sp.restricted()
    Rinv = np.linalg.inv(R)
    u = np.empty_like(V)
    u[0] = V[0]
    u[1:] = V[1:] - V[:-1] @ S.T
    coords = (sp.plus.conj().T @ (sp.P_plus @ u.T)).T     # u+(n) in the V+ basis
    n_terms = min(len(V), max_terms + 1)
    acc = np.zeros(sp.dim_plus, complex)
    back = np.eye(sp.dim_plus, dtype=complex)
    incs = []
    for n in range(n_terms):
        inc = back @ coords[n]
        acc = acc + inc
        incs.append(l1(inc))
        back = back @ Rinv
    # growing increments that matter at the scale of the sum; round-off alone grows like
    # eps * (fastest / slowest expansion)^n and stays negligible
    if (len(incs) > 4 and incs[-1] > 10 * max(incs[1], tol) and incs[-1] > incs[-2] > incs[-3]
            and incs[-1] > 1e-8 * max(1.0, l1(acc))):
        raise SeriesDiverges("increments of the recovery series are growing")
    v = sp.plus @ acc

    p = sp.dim - sp.dim_plus
    dev = np.empty(len(V))
    orbit = v.copy()
    for n in range(len(V)):
        dev[n] = l1(orbit - V[n])
        orbit = S @ orbit
    denom = np.array([max(n, 1) ** (p + 1) for n in range(len(V))], dtype=float)
    if seq.delta > 0:
        cert = float(np.max(dev / (seq.delta * denom)))
    else:
        cert = 0.0 if dev.max() <= 1e3 * tol * max(1.0, l1(v)) else math.inf
    return Recovery(v, cert, dev, n_terms)


def shadowing_constant(S, split: ExpandingSplit | None = None, horizon: int = 2000) -> float:
    """A constant ``C`` with ``|S^n v - v(n)| <= C delta n^(p+1)`` for ``n >= 1``.

    Built from ``sup_j |S^j P-| / (1+j)^(p-1)`` and ``sum_j |S^-j P+|``; depends
    on ``S`` only.
    """
    S = np.asarray(S, dtype=complex)
    sp = split or expanding_split(S)
    p = sp.dim - sp.dim_plus
    c_minus = 0.0
    if p:
        M = sp.P_minus.copy()
        for j in range(horizon):
            c_minus = max(c_minus, l1_operator_norm(M) / (1 + j) ** max(p - 1, 0))
            M = sp.P_minus @ (S @ M)        # re-project so round-off cannot seed the expanding part
    c_plus = 0.0
    if sp.dim_plus:
        R = sp.restricted()
        Rinv = np.linalg.inv(R)
        M = Rinv.copy()
        to_coords = sp.plus.conj().T @ sp.P_plus
        for _ in range(horizon):
            term = l1_operator_norm(sp.plus @ M @ to_coords)
            c_plus += term
            if term < 1e-17:
                break
            M = M @ Rinv
    return 2.0 ** p * c_minus + c_plus


def lyapunov_of_vector(Q, v, N: int = 200) -> float:
    """Growth rate of ``log|Q^n v|`` over the trailing half of ``n <= N``."""
    Q = np.asarray(Q, dtype=complex)
    w = np.asarray(v, dtype=complex)
    if l1(w) == 0:
        raise ValueError("vector must be nonzero")
    logs = [math.log(l1(w))]
    w = w / l1(w)
    for _ in range(N):
        w = Q @ w
        s = l1(w)
        logs.append(logs[-1] + math.log(s))
        w = w / s
    half = N // 2
    return (logs[N] - logs[half]) / (N - half)
