"""Compiled inner loops: periodic cell lists, local values and the Metropolis chain.

Every routine works on a periodic box of side ``side`` with coordinates in
``[-side/2, side/2)``.  Non-periodic (boundary-condition) geometry is obtained
by the caller embedding the window in a larger box, so that no pair within
the query radius can be joined across the seam.

Local functions are encoded in a flat float64 parameter vector::

    P = [code, radius, coef, k, cap]

with ``code`` one of the ``CODE_*`` constants below.  ``m`` always denotes the
number of configuration points in the closed ball excluding the focal point.
"""

import itertools
import math

import numpy as np
from numba import njit

CODE_PAIR = 0  # coef * m
CODE_HARDCORE = 1  # +inf if m + origin >= 2
CODE_INDICATOR = 2  # coef * 1[m + origin >= 2]
CODE_TUPLE_CONST = 3  # coef * C(m, k - 1)
CODE_TUPLE_CLIQUE = 4  # coef * #{(k-1)-subsets pairwise within radius}
CODE_CONST = 5  # coef * origin

# chain conventions
CONV_PERIODIC = 0
CONV_B1 = 1
CONV_B2 = 2


def grid_size(side, radius, n_points, d):
    """Cells per axis for a cell list with cell side >= radius."""
    g = int(math.floor(side / radius)) if radius > 0 else 1
    cap = max(3, int(math.floor((8.0 * max(n_points, 1) + 64.0) ** (1.0 / d))))
    g = min(g, cap)
    return g if g >= 3 else 1


def neighbor_offsets(g, d):
    if g == 1:
        return np.zeros((1, d), dtype=np.int64)
    return np.array(list(itertools.product((-1, 0, 1), repeat=d)), dtype=np.int64)


@njit(cache=True)
def _wrap(dx, side):
    return dx - side * math.floor(dx / side + 0.5)


@njit(cache=True, inline="always")
def _cell_coord(x, side, g):
    c = int(math.floor((x + 0.5 * side) * g / side))
    c %= g
    if c < 0:
        c += g
    return c


@njit(cache=True)
def cell_ids(pts, side, g):
    n, d = pts.shape
    out = np.empty(n, dtype=np.int64)
    for i in range(n):
        flat = 0
        for a in range(d):
            flat = flat * g + _cell_coord(pts[i, a], side, g)
        out[i] = flat
    return out


@njit(cache=True)
def _flat_neighbor_cell(center, off, side, g):
    d = center.shape[0]
    flat = 0
    for a in range(d):
        c = (_cell_coord(center[a], side, g) + off[a]) % g
        if c < 0:
            c += g
        flat = flat * g + c
    return flat


@njit(cache=True)
def _dist2(p, q, side):
    s = 0.0
    for a in range(p.shape[0]):
        dx = _wrap(q[a] - p[a], side)
        s += dx * dx
    return s


@njit(cache=True, inline="always")
def _dist2_row(center, pos, j, side):
    s = 0.0
    for a in range(center.shape[0]):
        dx = pos[j, a] - center[a]
        dx -= side * math.floor(dx / side + 0.5)
        s += dx * dx
    return s


@njit(cache=True, inline="always")
def _center_cells(center, side, g, cc):
    for a in range(center.shape[0]):
        cc[a] = _cell_coord(center[a], side, g)


@njit(cache=True, inline="always")
def _offset_cell(cc, offsets, o, g):
    flat = 0
    for a in range(cc.shape[0]):
        c = (cc[a] + offsets[o, a]) % g
        if c < 0:
            c += g
        flat = flat * g + c
    return flat


@njit(cache=True)
def ball_query(center, pts, side, radius, g, order, starts, offsets, exclude):
    """Ids (unsorted) of points within closed torus distance ``radius``."""
    r2 = radius * radius
    buf = np.empty(pts.shape[0], dtype=np.int64)
    cnt = 0
    for o in range(offsets.shape[0]):
        c = _flat_neighbor_cell(center, offsets[o], side, g)
        for s in range(starts[c], starts[c + 1]):
            j = order[s]
            if j == exclude:
                continue
            if _dist2(center, pts[j], side) <= r2:
                buf[cnt] = j
                cnt += 1
    return buf[:cnt]


@njit(cache=True)
def neighbor_csr(pts, side, radius, g, order, starts, offsets):
    """Symmetric closed-ball neighbor lists (self excluded), rows sorted."""
    n = pts.shape[0]
    r2 = radius * radius
    counts = np.zeros(n, dtype=np.int64)
    for i in range(n):
        for o in range(offsets.shape[0]):
            c = _flat_neighbor_cell(pts[i], offsets[o], side, g)
            for s in range(starts[c], starts[c + 1]):
                j = order[s]
                if j != i and _dist2(pts[i], pts[j], side) <= r2:
                    counts[i] += 1
    indptr = np.zeros(n + 1, dtype=np.int64)
    for i in range(n):
        indptr[i + 1] = indptr[i] + counts[i]
    indices = np.empty(indptr[n], dtype=np.int64)
    for i in range(n):
        k = indptr[i]
        for o in range(offsets.shape[0]):
            c = _flat_neighbor_cell(pts[i], offsets[o], side, g)
            for s in range(starts[c], starts[c + 1]):
                j = order[s]
                if j != i and _dist2(pts[i], pts[j], side) <= r2:
                    indices[k] = j
                    k += 1
        indices[indptr[i]:indptr[i + 1]] = np.sort(indices[indptr[i]:indptr[i + 1]])
    return indptr, indices


@njit(cache=True, inline="always")
def _comb(m, k):
    if k < 0 or k > m:
        return 0.0
    out = 1.0
    for t in range(k):
        out = out * (m - t) / (t + 1)
    return math.floor(out + 0.5)


@njit(cache=True, inline="always")
def count_value(P, m, origin):
    code = int(P[0])
    total = m + (1 if origin else 0)
    if code == CODE_PAIR:
        v = P[2] * m
    elif code == CODE_HARDCORE:
        v = math.inf if total >= 2 else 0.0
    elif code == CODE_INDICATOR:
        v = P[2] if total >= 2 else 0.0
    elif code == CODE_TUPLE_CONST:
        v = P[2] * _comb(m, int(P[3]) - 1)
    elif code == CODE_CONST:
        v = P[2] if origin else 0.0
    else:
        v = math.nan
    return min(v, P[4])


@njit(cache=True)
def clique_value(P, rel, m):
    """coef times the number of (k-1)-subsets of ``rel[:m]`` that are pairwise within radius."""
    k1 = int(P[3]) - 1
    r2 = P[1] * P[1]
    d = rel.shape[1]
    if k1 <= 0:
        total = 1.0
    elif k1 == 1:
        total = float(m)
    else:
        total = 0.0
        for a in range(m):
            for b in range(a + 1, m):
                s = 0.0
                for t in range(d):
                    dx = rel[a, t] - rel[b, t]
                    s += dx * dx
                if s > r2:
                    continue
                if k1 == 2:
                    total += 1.0
                    continue
                for c in range(b + 1, m):
                    ok = True
                    for e in (a, b):
                        s = 0.0
                        for t in range(d):
                            dx = rel[e, t] - rel[c, t]
                            s += dx * dx
                        if s > r2:
                            ok = False
                    if ok:
                        total += 1.0
    return min(P[2] * total, P[4])


@njit(cache=True)
def focal_values(pts, n_focal, side, P, indptr, indices):
    """Per focal point: V(all neighbours + origin) and V(boundary-only neighbours, no origin).

    Points with index >= n_focal are boundary points.
    """
    d = pts.shape[1]
    v_all = np.empty(n_focal)
    v_bc = np.empty(n_focal)
    code = int(P[0])
    maxdeg = 0
    for i in range(n_focal):
        maxdeg = max(maxdeg, indptr[i + 1] - indptr[i])
    rel = np.empty((maxdeg, d))
    rel_bc = np.empty((maxdeg, d))
    for i in range(n_focal):
        m = indptr[i + 1] - indptr[i]
        mb = 0
        for s in range(indptr[i], indptr[i + 1]):
            j = indices[s]
            if j >= n_focal:
                mb += 1
        if code == CODE_TUPLE_CLIQUE:
            kk = 0
            kb = 0
            for s in range(indptr[i], indptr[i + 1]):
                j = indices[s]
                for a in range(d):
                    rel[kk, a] = _wrap(pts[j, a] - pts[i, a], side)
                kk += 1
                if j >= n_focal:
                    for a in range(d):
                        rel_bc[kb, a] = rel[kk - 1, a]
                    kb += 1
            v_all[i] = clique_value(P, rel, m)
            v_bc[i] = clique_value(P, rel_bc, mb)
        else:
            v_all[i] = count_value(P, m, True)
            v_bc[i] = count_value(P, mb, False)
    return v_all, v_bc


# --------------------------------------------------------------------------
# Metropolis chain with single-point relocation on a linked cell list.


@njit(cache=True)
def ll_build(pts, side, g):
    n, d = pts.shape
    ncell = g ** d
    head = -np.ones(ncell, dtype=np.int64)
    nxt = -np.ones(n, dtype=np.int64)
    prv = -np.ones(n, dtype=np.int64)
    cell_of = cell_ids(pts, side, g)
    for i in range(n - 1, -1, -1):
        c = cell_of[i]
        nxt[i] = head[c]
        if head[c] >= 0:
            prv[head[c]] = i
        head[c] = i
    return head, nxt, prv, cell_of


@njit(cache=True, inline="always")
def _ll_remove(i, head, nxt, prv, cell_of):
    c = cell_of[i]
    if prv[i] >= 0:
        nxt[prv[i]] = nxt[i]
    else:
        head[c] = nxt[i]
    if nxt[i] >= 0:
        prv[nxt[i]] = prv[i]
    nxt[i] = -1
    prv[i] = -1


@njit(cache=True, inline="always")
def _ll_insert(i, c, head, nxt, prv, cell_of):
    cell_of[i] = c
    nxt[i] = head[c]
    prv[i] = -1
    if head[c] >= 0:
        prv[head[c]] = i
    head[c] = i


@njit(cache=True, inline="always")
def _ll_gather(center, pos, side, r2, g, offsets, head, nxt, skip, buf, cc):
    """Neighbours of ``center`` (skip excluded) into buf; returns (count, has_coincident)."""
    cnt = 0
    coincident = False
    _center_cells(center, side, g, cc)
    for o in range(offsets.shape[0]):
        j = head[_offset_cell(cc, offsets, o, g)]
        while j >= 0:
            if j != skip:
                dd = _dist2_row(center, pos, j, side)
                if dd <= r2:
                    buf[cnt] = j
                    cnt += 1
                    if dd == 0.0:
                        coincident = True
            j = nxt[j]
    return cnt, coincident


@njit(cache=True)
def _ll_value(j, pos, n_move, side, P, g, offsets, head, nxt, buf, rel, conv, cbuf, cc):
    """Local energy of movable point j from scratch (general path)."""
    r2 = P[1] * P[1]
    d = pos.shape[1]
    for a in range(d):
        cbuf[a] = pos[j, a]
    m, _ = _ll_gather(cbuf, pos, side, r2, g, offsets, head, nxt, j, buf, cc)
    mb = 0
    for t in range(m):
        q = buf[t]
        for a in range(d):
            rel[t, a] = _wrap(pos[q, a] - pos[j, a], side)
    v = clique_value(P, rel, m)
    if conv == CONV_B2:
        for t in range(m):
            q = buf[t]
            if q >= n_move:
                for a in range(d):
                    rel[mb, a] = _wrap(pos[q, a] - pos[j, a], side)
                mb += 1
        v += clique_value(P, rel, mb)
    return v


@njit(cache=True, nogil=True)
def mcmc_chunk(pos, n_move, side, P, conv, beta, g, offsets, head, nxt, prv, cell_of,
               cnt_win, cnt_bc, H, idx, prop, unif, record_every, rec_H,
               trace_every, trace):
    """Run len(idx) single-point relocation proposals in place.

    Returns (H, accepted).  ``rec_H[t]`` receives H after step (t+1)*record_every;
    ``trace[t]`` receives the movable positions after step (t+1)*trace_every.
    """
    n_total, d = pos.shape
    r2 = P[1] * P[1]
    code = int(P[0])
    general = code == CODE_TUPLE_CLIQUE
    bufA = np.empty(n_total, dtype=np.int64)
    bufB = np.empty(n_total, dtype=np.int64)
    buf = np.empty(n_total, dtype=np.int64)
    rel = np.empty((n_total, d))
    mark = np.zeros(n_total, dtype=np.int64)
    old_pos = np.empty(d)
    cA = np.empty(d)
    y = np.empty(d)
    cJ = np.empty(d)
    cc = np.empty(d, dtype=np.int64)
    accepted = 0
    steps = idx.shape[0]
    for t in range(steps):
        i = idx[t]
        for a in range(d):
            cA[a] = pos[i, a]
            y[a] = prop[t, a]
        mA, _ = _ll_gather(cA, pos, side, r2, g, offsets, head, nxt, i, bufA, cc)
        mB, coincident = _ll_gather(y, pos, side, r2, g, offsets, head, nxt, i, bufB, cc)
        accept = False
        delta = 0.0
        if not coincident:
            stamp = 2 * t + 1
            if not general:
                # count-based path using the maintained neighbour counts
                bcx = cnt_bc[i]
                bcy = 0
                winy = 0
                for s in range(mB):
                    if bufB[s] >= n_move:
                        bcy += 1
                    else:
                        winy += 1
                old_sum = count_value(P, cnt_win[i] + bcx, True)
                new_sum = count_value(P, winy + bcy, True)
                if conv == CONV_B2:
                    old_sum += count_value(P, bcx, False)
                    new_sum += count_value(P, bcy, False)
                for s in range(mA):
                    j = bufA[s]
                    if j < n_move:
                        mark[j] = stamp
                for s in range(mB):
                    j = bufB[s]
                    if j < n_move:
                        mark[j] = stamp + 1 if mark[j] != stamp else -stamp
                for s in range(mA):
                    j = bufA[s]
                    if j < n_move and mark[j] == stamp:
                        m0 = cnt_win[j] + cnt_bc[j]
                        old_sum += count_value(P, m0, True)
                        new_sum += count_value(P, m0 - 1, True)
                for s in range(mB):
                    j = bufB[s]
                    if j < n_move and mark[j] == stamp + 1:
                        m0 = cnt_win[j] + cnt_bc[j]
                        old_sum += count_value(P, m0, True)
                        new_sum += count_value(P, m0 + 1, True)
                if math.isinf(new_sum):
                    accept = False
                elif math.isinf(old_sum):
                    accept = True
                else:
                    delta = new_sum - old_sum
                    accept = delta <= 0.0 or unif[t] < math.exp(-beta * delta)
                if accept:
                    for s in range(mA):
                        j = bufA[s]
                        if j < n_move and mark[j] == stamp:
                            cnt_win[j] -= 1
                    for s in range(mB):
                        j = bufB[s]
                        if j < n_move and mark[j] == stamp + 1:
                            cnt_win[j] += 1
                    cnt_win[i] = winy
                    cnt_bc[i] = bcy
            else:
                # general path: evaluate affected points before and after the move
                old_sum = _ll_value(i, pos, n_move, side, P, g, offsets, head, nxt, buf, rel, conv, cJ, cc)
                for s in range(mA):
                    j = bufA[s]
                    if j < n_move and mark[j] != stamp:
                        mark[j] = stamp
                        old_sum += _ll_value(j, pos, n_move, side, P, g, offsets, head, nxt, buf, rel, conv, cJ, cc)
                for s in range(mB):
                    j = bufB[s]
                    if j < n_move and mark[j] != stamp:
                        mark[j] = stamp
                        old_sum += _ll_value(j, pos, n_move, side, P, g, offsets, head, nxt, buf, rel, conv, cJ, cc)
                for a in range(d):
                    old_pos[a] = pos[i, a]
                _ll_remove(i, head, nxt, prv, cell_of)
                for a in range(d):
                    pos[i, a] = y[a]
                c_new = 0
                for a in range(d):
                    c_new = c_new * g + _cell_coord(y[a], side, g)
                _ll_insert(i, c_new, head, nxt, prv, cell_of)
                new_sum = _ll_value(i, pos, n_move, side, P, g, offsets, head, nxt, buf, rel, conv, cJ, cc)
                stamp2 = 2 * t + 2
                for s in range(mA):
                    j = bufA[s]
                    if j < n_move and mark[j] != stamp2:
                        mark[j] = stamp2
                        new_sum += _ll_value(j, pos, n_move, side, P, g, offsets, head, nxt, buf, rel, conv, cJ, cc)
                for s in range(mB):
                    j = bufB[s]
                    if j < n_move and mark[j] != stamp2:
                        mark[j] = stamp2
                        new_sum += _ll_value(j, pos, n_move, side, P, g, offsets, head, nxt, buf, rel, conv, cJ, cc)
                delta = new_sum - old_sum
                accept = delta <= 0.0 or unif[t] < math.exp(-beta * delta)
                # undo; the common move code below re-applies accepted moves
                _ll_remove(i, head, nxt, prv, cell_of)
                for a in range(d):
                    pos[i, a] = old_pos[a]
                c_old = 0
                for a in range(d):
                    c_old = c_old * g + _cell_coord(old_pos[a], side, g)
                _ll_insert(i, c_old, head, nxt, prv, cell_of)
        if accept:
            accepted += 1
            H += delta
            _ll_remove(i, head, nxt, prv, cell_of)
            c_new = 0
            for a in range(d):
                pos[i, a] = y[a]
                c_new = c_new * g + _cell_coord(y[a], side, g)
            _ll_insert(i, c_new, head, nxt, prv, cell_of)
        if record_every > 0 and (t + 1) % record_every == 0:
            rec_H[(t + 1) // record_every - 1] = H
        if trace_every > 0 and (t + 1) % trace_every == 0:
            k = (t + 1) // trace_every - 1
            for q in range(n_move):
                for a in range(d):
                    trace[k, q, a] = pos[q, a]
    return H, accepted


@njit(cache=True)
def dart_throw(cands, side, radius, n_target):
    """Random sequential insertion: keep candidates farther than ``radius`` from all kept ones."""
    d = cands.shape[1]
    out = np.empty((n_target, d))
    r2 = radius * radius
    kept = 0
    for t in range(cands.shape[0]):
        ok = True
        for j in range(kept):
            if _dist2(cands[t], out[j], side) <= r2:
                ok = False
                break
        if ok:
            for a in range(d):
                out[kept, a] = cands[t, a]
            kept += 1
            if kept == n_target:
                break
    return out[:kept]


@njit(cache=True, nogil=True)
def batch_energy(batch, side, P):
    """Periodic energy of each configuration in a (S, n, d) batch by direct pair scan.

    Intended for small n, where building cell lists per sample would dominate.
    """
    S, n, d = batch.shape
    r2 = P[1] * P[1]
    code = int(P[0])
    out = np.empty(S)
    rel = np.empty((n, d))
    center = np.empty(d)
    for s in range(S):
        pts = batch[s]
        H = 0.0
        for i in range(n):
            for a in range(d):
                center[a] = pts[i, a]
            m = 0
            for j in range(n):
                if j == i:
                    continue
                dd = 0.0
                for a in range(d):
                    dx = pts[j, a] - center[a]
                    dx -= side * math.floor(dx / side + 0.5)
                    rel[m, a] = dx
                    dd += dx * dx
                if dd <= r2:
                    m += 1
            if code == CODE_TUPLE_CLIQUE:
                H += clique_value(P, rel, m)
            else:
                H += count_value(P, m, True)
        out[s] = H
    return out
