# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled grid search kernel.

Mirrors `_grid_fallback.astar_grid` operation for operation: identical
step costs, neighbor order, and (f, push-counter) tie-breaking, so both
backends return identical paths.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport INFINITY, fabs, sqrt

cnp.import_array()

cdef double SQRT2 = sqrt(2.0)

cdef int[8] DR = [-1, 1, 0, 0, -1, -1, 1, 1]
cdef int[8] DC = [0, 0, -1, 1, -1, 1, -1, 1]


cdef inline bint _heap_less(double fa, long long ca, double fb, long long cb) nogil:
    if fa != fb:
        return fa < fb
    return ca < cb


cdef void _heap_push(double[::1] hf, long long[::1] hc, long long[::1] hi,
                     long long* size, double f, long long counter, long long idx) nogil:
    cdef long long pos = size[0]
    cdef long long parent
    size[0] += 1
    while pos > 0:
        parent = (pos - 1) >> 1
        if _heap_less(f, counter, hf[parent], hc[parent]):
            hf[pos] = hf[parent]
            hc[pos] = hc[parent]
            hi[pos] = hi[parent]
            pos = parent
        else:
            break
    hf[pos] = f
    hc[pos] = counter
    hi[pos] = idx


cdef long long _heap_pop(double[::1] hf, long long[::1] hc, long long[::1] hi,
                         long long* size) nogil:
    cdef long long result = hi[0]
    cdef long long last = size[0] - 1
    cdef double f = hf[last]
    cdef long long c = hc[last]
    cdef long long idx = hi[last]
    cdef long long pos = 0
    cdef long long child
    size[0] = last
    if last == 0:
        return result
    while True:
        child = 2 * pos + 1
        if child >= last:
            break
        if child + 1 < last and _heap_less(hf[child + 1], hc[child + 1], hf[child], hc[child]):
            child += 1
        if _heap_less(hf[child], hc[child], f, c):
            hf[pos] = hf[child]
            hc[pos] = hc[child]
            hi[pos] = hi[child]
            pos = child
        else:
            break
    hf[pos] = f
    hc[pos] = c
    hi[pos] = idx
    return result


def astar_grid(blocked, visibility, start, goal, double visibility_weight, double cell_size):
    """Same contract as `_grid_fallback.astar_grid`."""
    cdef cnp.uint8_t[:, ::1] blocked_v = np.ascontiguousarray(blocked, dtype=np.uint8)
    cdef double[:, ::1] vis_v = np.ascontiguousarray(visibility, dtype=np.float64)
    cdef long long rows = blocked_v.shape[0]
    cdef long long cols = blocked_v.shape[1]
    cdef long long sr = start[0], sc = start[1], gr = goal[0], gc = goal[1]

    if blocked_v[sr, sc] or blocked_v[gr, gc]:
        return None
    if sr == gr and sc == gc:
        return np.array([[sr, sc]], dtype=np.int32)

    cdef long long n = rows * cols
    g_arr = np.full(n, np.inf, dtype=np.float64)
    came_arr = np.full(n, -1, dtype=np.int64)
    closed_arr = np.zeros(n, dtype=np.uint8)
    cdef double[::1] g = g_arr
    cdef long long[::1] came_from = came_arr
    cdef cnp.uint8_t[::1] closed = closed_arr

    # Each edge relaxation pushes at most once: 8n + 1 bounds the heap.
    cdef long long cap = 8 * n + 1
    hf_arr = np.empty(cap, dtype=np.float64)
    hc_arr = np.empty(cap, dtype=np.int64)
    hi_arr = np.empty(cap, dtype=np.int64)
    cdef double[::1] hf = hf_arr
    cdef long long[::1] hc = hc_arr
    cdef long long[::1] hi = hi_arr
    cdef long long heap_size = 0

    cdef long long start_idx = sr * cols + sc
    cdef long long goal_idx = gr * cols + gc
    cdef long long counter = 0
    cdef long long cur, nxt, r, c, nr, nc
    cdef int k
    cdef double g_cur, g_new, base, h
    cdef double dr_h, dc_h, lo, hi_d
    cdef bint found = False

    g[start_idx] = 0.0
    dr_h = fabs(<double>(sr - gr))
    dc_h = fabs(<double>(sc - gc))
    lo = dr_h if dr_h < dc_h else dc_h
    hi_d = dc_h if dr_h < dc_h else dr_h
    _heap_push(hf, hc, hi, &heap_size, cell_size * (hi_d + (SQRT2 - 1.0) * lo), counter, start_idx)

    with nogil:
        while heap_size > 0:
            cur = _heap_pop(hf, hc, hi, &heap_size)
            if closed[cur]:
                continue
            if cur == goal_idx:
                found = True
                break
            closed[cur] = 1
            r = cur / cols
            c = cur - r * cols
            g_cur = g[cur]
            for k in range(8):
                nr = r + DR[k]
                nc = c + DC[k]
                if nr < 0 or nr >= rows or nc < 0 or nc >= cols:
                    continue
                nxt = nr * cols + nc
                if closed[nxt] or blocked_v[nr, nc]:
                    continue
                base = cell_size if (DR[k] == 0 or DC[k] == 0) else cell_size * SQRT2
                g_new = g_cur + base + visibility_weight * vis_v[nr, nc]
                if g_new < g[nxt]:
                    g[nxt] = g_new
                    came_from[nxt] = cur
                    counter += 1
                    dr_h = fabs(<double>(nr - gr))
                    dc_h = fabs(<double>(nc - gc))
                    lo = dr_h if dr_h < dc_h else dc_h
                    hi_d = dc_h if dr_h < dc_h else dr_h
                    h = cell_size * (hi_d + (SQRT2 - 1.0) * lo)
                    _heap_push(hf, hc, hi, &heap_size, g_new + h, counter, nxt)

    if not found:
        return None

    cdef long long length = 0
    cur = goal_idx
    while cur != -1:
        length += 1
        cur = came_from[cur]
    path_arr = np.empty((length, 2), dtype=np.int32)
    cdef int[:, ::1] path_v = path_arr
    cur = goal_idx
    cdef long long pos = length - 1
    while cur != -1:
        path_v[pos, 0] = <int>(cur / cols)
        path_v[pos, 1] = <int>(cur - (cur / cols) * cols)
        pos -= 1
        cur = came_from[cur]
    return path_arr
