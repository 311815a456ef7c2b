"""Pure-Python grid search kernel.

Reference implementation of the weighted 8-connected A* used for path
planning. `trackcast.sim._grid_core` is the compiled twin; both must
expand nodes in exactly the same order (same costs, same tie-breaking
by push counter, same neighbor order) so planned paths are identical
regardless of which backend is active.
"""

import heapq
import math

import numpy as np

SQRT2 = math.sqrt(2.0)

# Fixed neighbor order: straight moves first, then diagonals.
NEIGHBORS = ((-1, 0), (1, 0), (0, -1), (0, 1), (-1, -1), (-1, 1), (1, -1), (1, 1))


def astar_grid(blocked, visibility, start, goal, visibility_weight, cell_size):
    """8-connected A* over a blocked/visibility grid.

    Step cost into cell (r, c) is cell_size * (1 or sqrt(2)) plus
    visibility_weight * visibility[r, c]; the octile-distance heuristic
    stays admissible because the visibility term is nonnegative.

    Returns an int32 array of (row, col) cells from start to goal
    inclusive, or None when no path exists.
    """
    rows, cols = blocked.shape
    sr, sc = start
    gr, gc = goal
    if blocked[sr, sc] or blocked[gr, gc]:
        return None
    if (sr, sc) == (gr, gc):
        return np.array([[sr, sc]], dtype=np.int32)

    n = rows * cols
    g = np.full(n, np.inf)
    came_from = np.full(n, -1, dtype=np.int64)
    closed = np.zeros(n, dtype=bool)

    def heuristic(r, c):
        dr = abs(r - gr)
        dc = abs(c - gc)
        lo, hi = (dr, dc) if dr < dc else (dc, dr)
        return cell_size * (hi + (SQRT2 - 1.0) * lo)

    start_idx = sr * cols + sc
    goal_idx = gr * cols + gc
    g[start_idx] = 0.0
    counter = 0
    heap = [(heuristic(sr, sc), counter, start_idx)]

    while heap:
        _, _, cur = heapq.heappop(heap)
        if closed[cur]:
            continue
        if cur == goal_idx:
            break
        closed[cur] = True
        r, c = divmod(cur, cols)
        g_cur = g[cur]
        for dr, dc in NEIGHBORS:
            nr = r + dr
            nc = c + dc
            if nr < 0 or nr >= rows or nc < 0 or nc >= cols:
                continue
            nxt = nr * cols + nc
            if closed[nxt] or blocked[nr, nc]:
                continue
            base = cell_size if dr == 0 or dc == 0 else cell_size * SQRT2
            g_new = g_cur + base + visibility_weight * visibility[nr, nc]
            if g_new < g[nxt]:
                g[nxt] = g_new
                came_from[nxt] = cur
                counter += 1
                heapq.heappush(heap, (g_new + heuristic(nr, nc), counter, nxt))
    else:
        return None

    path = []
    idx = goal_idx
    while idx != -1:
        path.append(divmod(idx, cols))
        idx = came_from[idx]
    path.reverse()
    return np.array(path, dtype=np.int32)
