"""Compiled rank-weighted alignment force.

Both kernels return, for every focal agent i,

    dv[i]   = (1/N) sum_j K(n_j/N) (v_j - v_i)
    wsum[i] = sum_{j != i} K(n_j/N)
    fp[i]   = order fingerprint of agent i's neighbor ranking

plus counts of tie groups and of ties left unresolved by radial velocity.
The n-d kernel sums over j in index order, the 1-D kernel in rank order;
the two agree to rounding.
"""

import numpy as np
from numba import njit

_GOLDEN64 = 0x9E3779B97F4A7C15


def agent_hashes(N: int) -> np.ndarray:
    return np.array([((j + 1) * _GOLDEN64) & 0xFFFFFFFFFFFFFFFF for j in range(N)], dtype=np.uint64)


@njit(cache=True)
def _sort_group(members, rad, count):
    # insertion sort on (rad, index); groups are tiny
    for a in range(1, count):
        m = members[a]
        b = a - 1
        while b >= 0 and (rad[members[b]] > rad[m] or (rad[members[b]] == rad[m] and members[b] > m)):
            members[b + 1] = members[b]
            b -= 1
        members[b + 1] = m
    unresolved = False
    for a in range(1, count):
        if rad[members[a]] == rad[members[a - 1]]:
            unresolved = True
    return unresolved


@njit(cache=True)
def _accumulate(i, v, weight, dv, wsum, N, d):
    for k in range(d):
        acc = 0.0
        for j in range(N):
            acc += weight[j] * (v[j, k] - v[i, k])
        dv[i, k] = acc / N
    s = 0.0
    for j in range(N):
        if j != i:
            s += weight[j]
    wsum[i] = s


@njit(cache=True)
def forces_nd(x, v, kvals, direction, hashes):
    N, d = x.shape
    dv = np.zeros((N, d))
    wsum = np.zeros(N)
    fp = np.zeros(N, dtype=np.uint64)
    dist = np.empty(N)
    rad = np.zeros(N)
    weight = np.empty(N)
    members = np.empty(N, dtype=np.int64)
    n_tied = 0
    n_unres = 0
    for i in range(N):
        for j in range(N):
            if d == 1:
                dist[j] = abs(x[j, 0] - x[i, 0])
            else:
                s = 0.0
                for k in range(d):
                    t = x[j, k] - x[i, k]
                    s += t * t
                dist[j] = np.sqrt(s)
        dist[i] = -1.0
        order = np.argsort(dist, kind="mergesort")
        p = 1
        while p < N:
            q = p + 1
            while q < N and dist[order[q]] == dist[order[p]]:
                q += 1
            if q - p > 1:
                cnt = q - p
                for a in range(cnt):
                    j = order[p + a]
                    members[a] = j
                    r = 0.0
                    if dist[j] > 0.0:
                        if d == 1:
                            dxj = x[j, 0] - x[i, 0]
                            r = (v[j, 0] - v[i, 0]) * (1.0 if dxj > 0 else -1.0)
                        else:
                            for k in range(d):
                                r += (x[j, k] - x[i, k]) * (v[j, k] - v[i, k])
                            r /= dist[j]
                    rad[j] = r * direction
                unres = _sort_group(members, rad, cnt)
                if dist[order[p]] == 0.0:
                    unres = True
                for a in range(cnt):
                    order[p + a] = members[a]
                n_tied += 1
                if unres:
                    n_unres += 1
            p = q
        h = np.uint64(0)
        for p in range(N):
            j = order[p]
            weight[j] = kvals[p + 1]
            h += np.uint64(p + 1) * hashes[j]
        fp[i] = h
        _accumulate(i, v, weight, dv, wsum, N, d)
    return dv, wsum, fp, n_tied, n_unres


@njit(cache=True)
def _tie_group_1d(xs, vs, p, L, R, dd, direction, members, rad, N):
    """Collect all agents at distance ``dd`` from sorted slot ``p``."""
    xi = xs[p]
    cnt = 0
    while L >= 0 and xi - xs[L] == dd:
        members[cnt] = L
        rad[L] = -(vs[L] - vs[p]) * direction if dd > 0.0 else 0.0
        cnt += 1
        L -= 1
    while R < N and xs[R] - xi == dd:
        members[cnt] = R
        rad[R] = (vs[R] - vs[p]) * direction if dd > 0.0 else 0.0
        cnt += 1
        R += 1
    return cnt, L, R


@njit(cache=True)
def _merge_general(xs, vs, srt, p, direction, order, members, idx, rad, N):
    """Neighbor order around slot ``p`` allowing coincident agents; returns (tied groups, unresolved)."""
    xi = xs[p]
    n_tied = 0
    n_unres = 0
    n = 1
    L = p - 1
    R = p + 1
    while L >= 0 or R < N:
        dL = xi - xs[L] if L >= 0 else np.inf
        dR = xs[R] - xi if R < N else np.inf
        dd = dL if dL < dR else dR
        cnt, L, R = _tie_group_1d(xs, vs, p, L, R, dd, direction, members, rad, N)
        if cnt > 1:
            for a in range(cnt):
                idx[a] = srt[members[a]]
            # order by (radial velocity, agent index)
            for a in range(1, cnt):
                m = members[a]
                im = idx[a]
                b = a - 1
                while b >= 0 and (rad[members[b]] > rad[m] or (rad[members[b]] == rad[m] and idx[b] > im)):
                    members[b + 1] = members[b]
                    idx[b + 1] = idx[b]
                    b -= 1
                members[b + 1] = m
                idx[b + 1] = im
            unres = dd == 0.0
            for a in range(1, cnt):
                if rad[members[a]] == rad[members[a - 1]]:
                    unres = True
            n_tied += 1
            if unres:
                n_unres += 1
        for a in range(cnt):
            order[n] = members[a]
            n += 1
    return n_tied, n_unres


@njit(cache=True)
def forces_1d(x1, v, kvals, direction, hashes):
    """O(N) per focal agent: merge the left and right neighbor runs on a line.

    Works in sorted coordinates; sums run in rank order.
    """
    N = x1.shape[0]
    srt = np.argsort(x1, kind="mergesort")
    xs = x1[srt]
    vs = v[srt, 0].copy()
    hs = hashes[srt]
    has_dup = False
    for s in range(N - 1):
        if xs[s] == xs[s + 1]:
            has_dup = True
    dv = np.zeros((N, 1))
    wsum = np.zeros(N)
    fp = np.zeros(N, dtype=np.uint64)
    rad = np.zeros(N)
    members = np.empty(N, dtype=np.int64)
    idx = np.empty(N, dtype=np.int64)
    order = np.empty(N, dtype=np.int64)
    n_tied = 0
    n_unres = 0
    for p in range(N):
        xi = xs[p]
        vi = vs[p]
        order[0] = p
        if has_dup:
            t, u = _merge_general(xs, vs, srt, p, direction, order, members, idx, rad, N)
            n_tied += t
            n_unres += u
        else:
            L = p - 1
            R = p + 1
            n = 1
            while L >= 0 and R < N:
                dL = xi - xs[L]
                dR = xs[R] - xi
                if dL < dR:
                    order[n] = L
                    L -= 1
                elif dR < dL:
                    order[n] = R
                    R += 1
                else:
                    rl = -(vs[L] - vi) * direction
                    rr = (vs[R] - vi) * direction
                    if rl < rr or (rl == rr and srt[L] < srt[R]):
                        order[n] = L
                        order[n + 1] = R
                    else:
                        order[n] = R
                        order[n + 1] = L
                    n_tied += 1
                    if rl == rr:
                        n_unres += 1
                    L -= 1
                    R += 1
                    n += 1
                n += 1
            while L >= 0:
                order[n] = L
                L -= 1
                n += 1
            while R < N:
                order[n] = R
                R += 1
                n += 1
        acc = 0.0
        ws = 0.0
        h = hs[p]
        for n in range(1, N):
            s = order[n]
            w = kvals[n + 1]
            acc += w * (vs[s] - vi)
            ws += w
            h += np.uint64(n + 1) * hs[s]
        i = srt[p]
        dv[i, 0] = acc / N
        wsum[i] = ws
        fp[i] = h
    return dv, wsum, fp, n_tied, n_unres


@njit(cache=True)
def weighted_alignment(weights, w, v):
    """(1/N) sum_k weights[k] (w_k - v), summed in index order."""
    N, d = w.shape
    out = np.zeros(d)
    for k in range(d):
        acc = 0.0
        for j in range(N):
            acc += weights[j] * (w[j, k] - v[k])
        out[k] = acc / N
    return out


@njit(cache=True)
def alignment_rows(weights, v):
    """Row-wise (1/N) sum_j weights[i, j] (v_j - v_i) in index order."""
    N, d = v.shape
    dv = np.zeros((N, d))
    for i in range(N):
        for k in range(d):
            acc = 0.0
            for j in range(N):
                acc += weights[i, j] * (v[j, k] - v[i, k])
            dv[i, k] = acc / N
    return dv
