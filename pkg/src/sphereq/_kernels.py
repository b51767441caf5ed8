"""Compiled inner loops.

Kept separate so the numba dependency is confined to one module. Every kernel
fixes its floating-point accumulation order per output element, which makes
batch results bitwise identical to one-at-a-time evaluation.
"""

import numba
import numpy as np


@numba.njit(cache=True)
def rowwise_matmul(x, mt):
    """Return ``x @ mt`` with an accumulation order independent of batch size."""
    n, d = x.shape
    m = mt.shape[1]
    out = np.zeros((n, m))
    block = 8
    for i0 in range(0, n, block):
        i1 = min(i0 + block, n)
        for k in range(d):
            row = mt[k]
            for i in range(i0, i1):
                a = x[i, k]
                o = out[i]
                for j in range(m):
                    o[j] += a * row[j]
    return out


@numba.njit(cache=True)
def _sqdist(x, i, c, j):
    s = 0.0
    for t in range(x.shape[1]):
        diff = x[i, t] - c[j, t]
        s += diff * diff
    return s


@numba.njit(cache=True)
def assign_full(x, c):
    """Exhaustive nearest centroid with lowest-index tie-breaking."""
    n = x.shape[0]
    k = c.shape[0]
    labels = np.empty(n, dtype=np.int64)
    dist = np.empty(n)
    for i in range(n):
        best = 0
        bd = _sqdist(x, i, c, 0)
        for j in range(1, k):
            dj = _sqdist(x, i, c, j)
            if dj < bd:
                bd = dj
                best = j
        labels[i] = best
        dist[i] = bd
    return labels, dist


@numba.njit(cache=True)
def assign_local(x, c, prev, cand, radius):
    """Nearest centroid searched among the neighbours of the previous label.

    ``cand[a]`` lists the centroids closest to centroid ``a`` (including it)
    and ``radius[a]`` is the distance from ``a`` to the nearest centroid not
    in that list. If ``radius[a] - |x - c_a|`` exceeds the best candidate
    distance, the triangle inequality rules out every other centroid;
    otherwise the point falls back to an exhaustive scan. Results therefore
    equal :func:`assign_full` exactly.
    """
    n = x.shape[0]
    k = c.shape[0]
    width = cand.shape[1]
    labels = np.empty(n, dtype=np.int64)
    dist = np.empty(n)
    fallbacks = 0
    for i in range(n):
        a = prev[i]
        da = _sqdist(x, i, c, a)
        best = a
        bd = da
        for t in range(width):
            j = cand[a, t]
            if j == a:
                continue
            dj = _sqdist(x, i, c, j)
            if dj < bd or (dj == bd and j < best):
                bd = dj
                best = j
        if radius[a] - np.sqrt(da) <= np.sqrt(bd):
            fallbacks += 1
            best = 0
            bd = _sqdist(x, i, c, 0)
            for j in range(1, k):
                dj = _sqdist(x, i, c, j)
                if dj < bd:
                    bd = dj
                    best = j
        labels[i] = best
        dist[i] = bd
    return labels, dist, fallbacks


@numba.njit(cache=True)
def kmeanspp(x, n_pick, uniforms, symmetric):
    """D^2-weighted seeding; returns indices of the chosen sample points.

    With ``symmetric`` the distance of each point is measured to both ``c``
    and ``-c`` for every chosen ``c``, matching a sign-paired codebook.
    """
    n, p = x.shape
    picks = np.empty(n_pick, dtype=np.int64)
    mind = np.empty(n)
    first = min(int(uniforms[0] * n), n - 1)
    picks[0] = first
    for i in range(n):
        s = 0.0
        s2 = 0.0
        for t in range(p):
            diff = x[i, t] - x[first, t]
            s += diff * diff
            tot = x[i, t] + x[first, t]
            s2 += tot * tot
        mind[i] = min(s, s2) if symmetric else s
    for j in range(1, n_pick):
        total = 0.0
        for i in range(n):
            total += mind[i]
        target = uniforms[j] * total
        acc = 0.0
        chosen = n - 1
        for i in range(n):
            acc += mind[i]
            if acc > target:
                chosen = i
                break
        picks[j] = chosen
        for i in range(n):
            s = 0.0
            s2 = 0.0
            for t in range(p):
                diff = x[i, t] - x[chosen, t]
                s += diff * diff
                tot = x[i, t] + x[chosen, t]
                s2 += tot * tot
            v = min(s, s2) if symmetric else s
            if v < mind[i]:
                mind[i] = v
    return picks


@numba.njit(cache=True)
def rabitq_sweep(a, sums, top):
    """Best breakpoint interval of the RabitQ scale sweep for each row.

    ``a`` holds |u| per row and ``sums`` its row sums. Breakpoints
    ``k / a_j`` are visited in ascending order by merging the ``top`` lists
    (each already sorted once ``a`` is sorted) through a binary heap. Returns
    the keys bounding the best state: ``lo`` (0 if no breakpoint is crossed)
    and ``hi`` (inf if every breakpoint is crossed).
    """
    n, d = a.shape
    lo = np.zeros(n)
    hi = np.full(n, np.inf)
    heap_key = np.empty(top)
    heap_k = np.empty(top, dtype=np.int64)
    pos = np.empty(top, dtype=np.int64)
    for i in range(n):
        row = a[i]
        order = np.argsort(-row, kind="mergesort")
        live = d
        while live > 0 and row[order[live - 1]] == 0.0:
            live -= 1
        ip = 0.5 * sums[i]
        nn = 0.25 * d
        best = 0.25 * sums[i] ** 2 / (0.25 * d)
        pending = False
        size = 0
        if live > 0:
            for k in range(top):
                pos[k] = 0
                heap_key[size] = (k + 1.0) / row[order[0]]
                heap_k[size] = k
                size += 1
        while size > 0:
            key = heap_key[0]
            k = heap_k[0]
            if pending:
                hi[i] = key
                pending = False
            ip += row[order[pos[k]]]
            nn += 2.0 * (k + 1.0)
            score = ip * ip / nn
            if score > best:
                best = score
                lo[i] = key
                pending = True
            pos[k] += 1
            if pos[k] < live:
                heap_key[0] = (k + 1.0) / row[order[pos[k]]]
            else:
                size -= 1
                heap_key[0] = heap_key[size]
                heap_k[0] = heap_k[size]
            # Sift down; ties resolve to the smaller level k.
            j = 0
            while True:
                c = 2 * j + 1
                if c >= size:
                    break
                if c + 1 < size and (
                    heap_key[c + 1] < heap_key[c] or (heap_key[c + 1] == heap_key[c] and heap_k[c + 1] < heap_k[c])
                ):
                    c += 1
                if heap_key[c] < heap_key[j] or (heap_key[c] == heap_key[j] and heap_k[c] < heap_k[j]):
                    heap_key[j], heap_key[c] = heap_key[c], heap_key[j]
                    heap_k[j], heap_k[c] = heap_k[c], heap_k[j]
                    j = c
                else:
                    break
        if pending:
            hi[i] = np.inf
    return lo, hi
