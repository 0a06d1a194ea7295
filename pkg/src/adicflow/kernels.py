"""Hot loops of the flow: advancing a point, successor maps and batch runs.

A point is ``P[l-1] = x_l`` for ``l = 1..n`` (global edge ids) plus a
double-double offset inside the level-1 cell.  Channels accumulate values of
finitely-additive measures (``kind 0``) or integrals of cylinder observables
(``kind 1``) along the traversed arc.

Whole cells crossed while ascending and descending contribute their tabulated
values.  Partial level-1 cells are resolved by descending through the
sub-levels ``0, -1, .., lo`` and interpolating linearly in the deepest cell,
whose value is below the arc tolerance by construction of ``lo``.

Status codes: ``OK``; ``NEED_EXTEND`` when the window top is reached (the
path is left untouched so the caller can widen it and retry).
"""
from __future__ import annotations

import numpy as np

from ._accel import dd_add, dd_le, dd_lt, dd_sub, njit

OK = 0
NEED_EXTEND = 1


@njit
def _obs_code(P, l, D, Ebase):
    """Mixed-radix code of ``x_{l+1} .. x_D`` scaled to sit above a level-``l`` digit."""
    code = 0
    mult = Ebase
    for j in range(l + 1, D + 1):
        code += P[j - 1] * mult
        mult *= Ebase
    return code


@njit
def _add_cell(acc, sign, l, e, code_above, lvl_lo, eF, ckind, W, tab, D):
    """Add the value of the whole level-``l`` cell with ``x_l = e``."""
    r = l - lvl_lo
    f = eF[e]
    for k in range(acc.shape[0]):
        if ckind[k] == 0 or l > D:
            acc[k] += sign * W[k, r, f]
        else:
            acc[k] += sign * tab[k, l - 1, e + code_above]


@njit
def _prefix(acc, sign, P, s_h, s_l, lvl_lo, gid, eF, out_ptr, out_list, Mh, Ml,
            ckind, W, fval, D, Ebase, n_meas):
    """Add ``sign`` times the value of ``[start of level-1 cell, start + s)``."""
    K = acc.shape[0]
    if D > 0:
        code = P[0] + _obs_code(P, 1, D, Ebase)
    else:
        code = 0
    for k in range(K):
        if ckind[k] == 1:
            acc[k] += sign * fval[k, code] * (s_h + s_l)
    if n_meas == 0:
        return
    vtx = eF[P[0]]
    for j in range(0, lvl_lo - 1, -1):
        r = j - lvl_lo
        g = gid[r]
        start = out_ptr[g, vtx]
        end = out_ptr[g, vtx + 1]
        chosen = out_list[end - 1]
        for p in range(start, end):
            y = out_list[p]
            fy = eF[y]
            if p == end - 1 or dd_lt(s_h, s_l, Mh[r, fy], Ml[r, fy]):
                chosen = y
                break
            s_h, s_l = dd_sub(s_h, s_l, Mh[r, fy], Ml[r, fy])
            for k in range(K):
                if ckind[k] == 0:
                    acc[k] += sign * W[k, r, fy]
        vtx = eF[chosen]
        if j == lvl_lo:
            frac = (s_h + s_l) / (Mh[r, vtx] + Ml[r, vtx])
            if frac < 0.0:
                frac = 0.0
            elif frac > 1.0:
                frac = 1.0
            for k in range(K):
                if ckind[k] == 0:
                    acc[k] += sign * frac * W[k, r, vtx]


@njit
def advance(P, n_used, off_h, off_l, t_h, t_l, lvl_lo, gid, eF, eI, out_ptr, out_list, pos,
            Mh, Ml, ckind, W, tab, fval, D, Ebase, n_meas, acc):
    """Move forward by ``t >= 0``; returns ``(status, offset_hi, offset_lo)``.

    ``acc`` must be zero on entry; on ``NEED_EXTEND`` its contents are junk
    and ``P`` is unchanged.
    """
    r1 = 1 - lvl_lo
    x1 = P[0]
    f1 = eF[x1]
    rest_h, rest_l = dd_sub(Mh[r1, f1], Ml[r1, f1], off_h, off_l)
    if dd_lt(t_h, t_l, rest_h, rest_l):
        new_h, new_l = dd_add(off_h, off_l, t_h, t_l)
        _prefix(acc, 1.0, P, new_h, new_l, lvl_lo, gid, eF, out_ptr, out_list, Mh, Ml,
                ckind, W, fval, D, Ebase, n_meas)
        _prefix(acc, -1.0, P, off_h, off_l, lvl_lo, gid, eF, out_ptr, out_list, Mh, Ml,
                ckind, W, fval, D, Ebase, n_meas)
        return OK, new_h, new_l
    # finish the current level-1 cell
    code1 = _obs_code(P, 1, D, Ebase) if D >= 1 else 0
    _add_cell(acc, 1.0, 1, x1, code1, lvl_lo, eF, ckind, W, tab, D)
    _prefix(acc, -1.0, P, off_h, off_l, lvl_lo, gid, eF, out_ptr, out_list, Mh, Ml,
            ckind, W, fval, D, Ebase, n_meas)
    rem_h, rem_l = dd_sub(t_h, t_l, rest_h, rest_l)
    # ascend until a later sibling contains the end point
    l = 1
    target = -1
    while target < 0:
        if l > n_used:
            return NEED_EXTEND, off_h, off_l
        x = P[l - 1]
        r = l - lvl_lo
        g = gid[r]
        end = out_ptr[g, eI[x] + 1]
        code = _obs_code(P, l, D, Ebase) if l <= D else 0
        for p in range(pos[x] + 1, end):
            e = out_list[p]
            fe = eF[e]
            if dd_lt(rem_h, rem_l, Mh[r, fe], Ml[r, fe]):
                target = e
                break
            rem_h, rem_l = dd_sub(rem_h, rem_l, Mh[r, fe], Ml[r, fe])
            _add_cell(acc, 1.0, l, e, code, lvl_lo, eF, ckind, W, tab, D)
        if target < 0:
            l += 1
    P[l - 1] = target
    # descend, taking whole children in order
    for j in range(l - 1, 0, -1):
        r = j - lvl_lo
        g = gid[r]
        vtx = eF[P[j]]
        start = out_ptr[g, vtx]
        end = out_ptr[g, vtx + 1]
        code = _obs_code(P, j, D, Ebase) if j <= D else 0
        for p in range(start, end):
            y = out_list[p]
            fy = eF[y]
            if p == end - 1 or dd_lt(rem_h, rem_l, Mh[r, fy], Ml[r, fy]):
                P[j - 1] = y
                break
            rem_h, rem_l = dd_sub(rem_h, rem_l, Mh[r, fy], Ml[r, fy])
            _add_cell(acc, 1.0, j, y, code, lvl_lo, eF, ckind, W, tab, D)
    # the partial cell goes through a scratch buffer so that every channel
    # rounds it against the large whole-cell total in the same way
    tmp = np.zeros(acc.shape[0])
    _prefix(tmp, 1.0, P, rem_h, rem_l, lvl_lo, gid, eF, out_ptr, out_list, Mh, Ml,
            ckind, W, fval, D, Ebase, n_meas)
    for k in range(acc.shape[0]):
        acc[k] += tmp[k]
    return OK, rem_h, rem_l


@njit
def retreat(P, n_used, off_h, off_l, t_h, t_l, lvl_lo, gid, eF, eI, out_ptr, out_list, pos, Mh, Ml):
    """Move backward by ``t >= 0`` (positions only); returns ``(status, offset_hi, offset_lo)``.

    Landing exactly on a cell boundary yields offset 0 in the later cell.
    """
    if dd_le(t_h, t_l, off_h, off_l):
        new_h, new_l = dd_sub(off_h, off_l, t_h, t_l)
        return OK, new_h, new_l
    rem_h, rem_l = dd_sub(t_h, t_l, off_h, off_l)
    l = 1
    target = -1
    while target < 0:
        if l > n_used:
            return NEED_EXTEND, off_h, off_l
        x = P[l - 1]
        r = l - lvl_lo
        g = gid[r]
        start = out_ptr[g, eI[x]]
        for p in range(pos[x] - 1, start - 1, -1):
            e = out_list[p]
            fe = eF[e]
            if dd_le(rem_h, rem_l, Mh[r, fe], Ml[r, fe]):
                target = e
                break
            rem_h, rem_l = dd_sub(rem_h, rem_l, Mh[r, fe], Ml[r, fe])
        if target < 0:
            l += 1
    P[l - 1] = target
    for j in range(l - 1, 0, -1):
        r = j - lvl_lo
        g = gid[r]
        vtx = eF[P[j]]
        start = out_ptr[g, vtx]
        end = out_ptr[g, vtx + 1]
        for p in range(end - 1, start - 1, -1):
            y = out_list[p]
            fy = eF[y]
            if p == start or dd_le(rem_h, rem_l, Mh[r, fy], Ml[r, fy]):
                P[j - 1] = y
                break
            rem_h, rem_l = dd_sub(rem_h, rem_l, Mh[r, fy], Ml[r, fy])
    r1 = 1 - lvl_lo
    f1 = eF[P[0]]
    new_h, new_l = dd_sub(Mh[r1, f1], Ml[r1, f1], rem_h, rem_l)
    if new_h < 0.0:
        new_h, new_l = 0.0, 0.0
    return OK, new_h, new_l


@njit
def successor(P, n_used, lvl_lo, gid, eF, eI, out_ptr, out_list, pos):
    """Next level-1 cell in the adic order; ``NEED_EXTEND`` if ``x_1..x_n`` are all maximal."""
    l = 1
    while l <= n_used:
        x = P[l - 1]
        g = gid[l - lvl_lo]
        if pos[x] + 1 < out_ptr[g, eI[x] + 1]:
            break
        l += 1
    if l > n_used:
        return NEED_EXTEND
    P[l - 1] = out_list[pos[P[l - 1]] + 1]
    for j in range(l - 1, 0, -1):
        g = gid[j - lvl_lo]
        P[j - 1] = out_list[out_ptr[g, eF[P[j]]]]
    return OK


@njit
def predecessor(P, n_used, lvl_lo, gid, eF, eI, out_ptr, out_list, pos):
    l = 1
    while l <= n_used:
        x = P[l - 1]
        g = gid[l - lvl_lo]
        if pos[x] > out_ptr[g, eI[x]]:
            break
        l += 1
    if l > n_used:
        return NEED_EXTEND
    P[l - 1] = out_list[pos[P[l - 1]] - 1]
    for j in range(l - 1, 0, -1):
        g = gid[j - lvl_lo]
        P[j - 1] = out_list[out_ptr[g, eF[P[j]] + 1] - 1]
    return OK


@njit
def advance_slow(P, n_used, off_h, off_l, t_h, t_l, lvl_lo, gid, eF, eI, out_ptr, out_list, pos,
                 Mh, Ml, ckind, W, tab, fval, D, Ebase, n_meas, acc):
    """Event-by-event version of ``advance``: one successor step per level-1 cell.

    Returns ``(status, offset_hi, offset_lo, events)``.  ``P`` may be modified
    even when ``NEED_EXTEND`` is returned, so callers pass a copy.
    """
    r1 = 1 - lvl_lo
    _prefix(acc, -1.0, P, off_h, off_l, lvl_lo, gid, eF, out_ptr, out_list, Mh, Ml,
            ckind, W, fval, D, Ebase, n_meas)
    rem_h, rem_l = dd_add(t_h, t_l, off_h, off_l)
    events = 0
    while True:
        f1 = eF[P[0]]
        if dd_lt(rem_h, rem_l, Mh[r1, f1], Ml[r1, f1]):
            break
        code1 = _obs_code(P, 1, D, Ebase) if D >= 1 else 0
        _add_cell(acc, 1.0, 1, P[0], code1, lvl_lo, eF, ckind, W, tab, D)
        rem_h, rem_l = dd_sub(rem_h, rem_l, Mh[r1, f1], Ml[r1, f1])
        status = successor(P, n_used, lvl_lo, gid, eF, eI, out_ptr, out_list, pos)
        if status != OK:
            return status, rem_h, rem_l, events
        events += 1
    tmp = np.zeros(acc.shape[0])
    _prefix(tmp, 1.0, P, rem_h, rem_l, lvl_lo, gid, eF, out_ptr, out_list, Mh, Ml,
            ckind, W, fval, D, Ebase, n_meas)
    for k in range(acc.shape[0]):
        acc[k] += tmp[k]
    return OK, rem_h, rem_l, events


@njit
def advance_batch(P2, n_used, off2, t2, lvl_lo, gid, eF, eI, out_ptr, out_list, pos,
                  Mh, Ml, ckind, W, tab, fval, D, Ebase, n_meas, acc2, status):
    """``advance`` for every row; rows with ``status != OK`` are left for the caller."""
    for s in range(P2.shape[0]):
        row = P2[s]
        st, oh, ol = advance(row, n_used[s], off2[s, 0], off2[s, 1], t2[s, 0], t2[s, 1], lvl_lo, gid,
                             eF, eI, out_ptr, out_list, pos, Mh, Ml, ckind, W, tab, fval, D, Ebase,
                             n_meas, acc2[s])
        status[s] = st
        if st == OK:
            off2[s, 0] = oh
            off2[s, 1] = ol


def empty_tables(K: int):
    return np.zeros((K, 1, 1)), np.zeros((K, 1))
