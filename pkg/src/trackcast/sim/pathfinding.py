"""Grid path planning over a MapSpec.

The A* kernel itself lives in a compiled Cython module when available
(built at install time) with a pure-Python twin as fallback; both
produce bit-identical paths. `HAVE_COMPILED` reports which one loaded.
"""

from __future__ import annotations

import numpy as np

from ..errors import UnreachableError
from . import _grid_fallback
from .maps import MapSpec

try:
    from . import _grid_core as _impl

    HAVE_COMPILED = True
except ImportError:  # pragma: no cover - depends on build environment
    _impl = _grid_fallback
    HAVE_COMPILED = False


def astar_cells(
    blocked: np.ndarray,
    visibility: np.ndarray,
    start: tuple[int, int],
    goal: tuple[int, int],
    visibility_weight: float,
    cell_size: float,
    *,
    force_fallback: bool = False,
) -> np.ndarray:
    """8-connected A* on the raw grid. Returns (N, 2) of (row, col).

    Cost per move = step length + visibility_weight * visibility of the
    entered cell, so high-visibility terrain is crossed only when the
    detour would be longer than the exposure is worth.
    """
    backend = _grid_fallback if force_fallback else _impl
    blocked = np.ascontiguousarray(blocked, dtype=np.uint8)
    visibility = np.ascontiguousarray(visibility, dtype=np.float64)
    path = backend.astar_grid(
        blocked, visibility,
        (int(start[0]), int(start[1])), (int(goal[0]), int(goal[1])),
        float(visibility_weight), float(cell_size),
    )
    if path is None:
        raise UnreachableError(f"no path from {tuple(start)} to {tuple(goal)}")
    return path


def a_star_path(
    map_spec: MapSpec,
    start_xy,
    goal_xy,
    visibility_weight: float = 200.0,
    *,
    force_fallback: bool = False,
) -> np.ndarray:
    """World-coordinate A*: returns (N, 2) waypoints of cell centers.

    Endpoints are snapped to their containing cells; if either cell is
    blocked by the inflated planning grid, the nearest free cell is used
    so that paths can still start at map-border spawn points.
    """
    blocked = map_spec.blocked_grid()
    start = _nearest_free(blocked, map_spec.world_to_cell(start_xy))
    goal = _nearest_free(blocked, map_spec.world_to_cell(goal_xy))
    cells = astar_cells(
        blocked, map_spec.visibility, start, goal,
        visibility_weight, map_spec.cell_size, force_fallback=force_fallback,
    )
    return map_spec.cells_to_world(cells)


def _nearest_free(blocked: np.ndarray, cell: tuple[int, int]) -> tuple[int, int]:
    r, c = cell
    if not blocked[r, c]:
        return r, c
    free = np.argwhere(blocked == 0)
    if len(free) == 0:
        raise UnreachableError("planning grid is fully blocked")
    d2 = (free[:, 0] - r) ** 2 + (free[:, 1] - c) ** 2
    fr, fc = free[int(np.argmin(d2))]
    return int(fr), int(fc)


def path_length(path: np.ndarray) -> float:
    path = np.asarray(path, dtype=np.float64)
    if len(path) < 2:
        return 0.0
    return float(np.linalg.norm(np.diff(path, axis=0), axis=1).sum())
