"""World maps: circular obstacles, a visibility field, and named sites.

Positions are continuous world coordinates in [0, size); planning runs
on a square cell grid whose resolution is set by the visibility field
(cell_size = size / grid_n). Two coordinate conventions are exposed:

  normalized   x * 2/size - 1, in [-1, 1]   (model space, invertible)
  unit         x / size, in [0, 1]          (metric space)
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter

from ..errors import ConfigError, DataError

# Planning clearance in cells added on top of the true obstacle radius;
# keeps integer-quantized serialized states from rounding into obstacles.
PLAN_INFLATION_CELLS = 1.0


@dataclass
class MapSpec:
    size: float
    obstacles: np.ndarray  # (K, 3) columns cx, cy, radius (world units)
    visibility: np.ndarray  # (G, G) in [0, 1]; [row, col] = [y-cell, x-cell]
    hideouts: np.ndarray  # (Nh, 2)
    rendezvous_points: np.ndarray  # (Nr, 2)
    map_id: str = ""
    _blocked: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.obstacles = np.asarray(self.obstacles, dtype=np.float64).reshape(-1, 3)
        self.visibility = np.asarray(self.visibility, dtype=np.float64)
        self.hideouts = np.asarray(self.hideouts, dtype=np.float64).reshape(-1, 2)
        self.rendezvous_points = np.asarray(self.rendezvous_points, dtype=np.float64).reshape(-1, 2)
        if self.visibility.ndim != 2 or self.visibility.shape[0] != self.visibility.shape[1]:
            raise ConfigError(f"visibility grid must be square, got {self.visibility.shape}")
        if np.any(self.visibility < 0) or np.any(self.visibility > 1):
            raise ConfigError("visibility values must lie in [0, 1]")
        for name, pts in (("hideouts", self.hideouts), ("rendezvous_points", self.rendezvous_points)):
            if len(pts) and np.any(self.inside_obstacle(pts)):
                raise DataError(f"{name} must lie outside all obstacles")
        if not self.map_id:
            self.map_id = self.fingerprint()

    # -- grid geometry ------------------------------------------------

    @property
    def grid_n(self) -> int:
        return self.visibility.shape[0]

    @property
    def cell_size(self) -> float:
        return self.size / self.grid_n

    def world_to_cell(self, xy) -> tuple[int, int]:
        x, y = float(xy[0]), float(xy[1])
        c = min(self.grid_n - 1, max(0, int(x / self.cell_size)))
        r = min(self.grid_n - 1, max(0, int(y / self.cell_size)))
        return r, c

    def cell_center(self, r: int, c: int) -> np.ndarray:
        return np.array([(c + 0.5) * self.cell_size, (r + 0.5) * self.cell_size])

    def cells_to_world(self, cells: np.ndarray) -> np.ndarray:
        """(N, 2) of (row, col) -> (N, 2) of world (x, y) cell centers."""
        cells = np.asarray(cells)
        out = np.empty((len(cells), 2))
        out[:, 0] = (cells[:, 1] + 0.5) * self.cell_size
        out[:, 1] = (cells[:, 0] + 0.5) * self.cell_size
        return out

    # -- obstacle queries ----------------------------------------------

    def inside_obstacle(self, points, margin: float = 0.0) -> np.ndarray:
        """True where a point is strictly inside any (inflated) obstacle."""
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        hit = np.zeros(len(pts), dtype=bool)
        for cx, cy, r in self.obstacles:
            d2 = (pts[:, 0] - cx) ** 2 + (pts[:, 1] - cy) ** 2
            hit |= d2 < (r + margin) ** 2
        return hit

    def blocked_grid(self) -> np.ndarray:
        """uint8 (G, G) planning grid with conservative obstacle inflation."""
        if self._blocked is None:
            g = self.grid_n
            xs = (np.arange(g) + 0.5) * self.cell_size
            cx, cy = np.meshgrid(xs, xs)  # cx varies along columns, cy along rows
            centers = np.stack([cx.ravel(), cy.ravel()], axis=1)
            margin = PLAN_INFLATION_CELLS * self.cell_size
            self._blocked = (
                self.inside_obstacle(centers, margin=margin)
                .reshape(g, g)
                .astype(np.uint8)
            )
        return self._blocked

    def free_cells(self) -> np.ndarray:
        """(N, 2) array of unblocked (row, col) cells."""
        return np.argwhere(self.blocked_grid() == 0)

    # -- coordinate conventions ----------------------------------------

    def normalize(self, points):
        return np.asarray(points, dtype=np.float64) * (2.0 / self.size) - 1.0

    def denormalize(self, points):
        return (np.asarray(points, dtype=np.float64) + 1.0) * (self.size / 2.0)

    def to_unit(self, points):
        return np.asarray(points, dtype=np.float64) / self.size

    def normalized_obstacles(self) -> np.ndarray:
        """Obstacles as (cx, cy, r) in model space ([-1, 1] coords)."""
        out = self.obstacles.copy()
        out[:, :2] = self.normalize(out[:, :2])
        out[:, 2] *= 2.0 / self.size
        return out

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(np.float64(self.size).tobytes())
        for arr in (self.obstacles, self.visibility, self.hideouts, self.rendezvous_points):
            h.update(np.ascontiguousarray(arr, dtype=np.float64).tobytes())
        return h.hexdigest()[:16]


def _sample_clear_points(
    map_spec: MapSpec,
    count: int,
    rng: np.random.Generator,
    min_separation: float,
    existing: list[np.ndarray],
) -> np.ndarray:
    """Free cell centers clear of obstacles and of each other."""
    free = map_spec.free_cells()
    if len(free) == 0:
        raise DataError("map has no free cells")
    chosen: list[np.ndarray] = []
    placed = [np.asarray(p, dtype=np.float64) for p in existing]
    for _ in range(10_000):
        if len(chosen) == count:
            break
        r, c = free[rng.integers(len(free))]
        p = map_spec.cell_center(r, c)
        if any(np.linalg.norm(p - q) < min_separation for q in placed):
            continue
        chosen.append(p)
        placed.append(p)
    if len(chosen) < count:
        raise DataError("could not place clear points; map too crowded")
    return np.array(chosen)


def generate_map(
    size: float = 2428.0,
    cell_target: float = 8.0,
    n_obstacles: int = 18,
    obstacle_radius: tuple[float, float] = (0.025, 0.08),
    n_hideouts: int = 5,
    n_rendezvous: int = 4,
    visibility_smoothness: float = 12.0,
    rng: np.random.Generator | None = None,
) -> MapSpec:
    """Procedural map: random circular mountains plus a smooth visibility field.

    obstacle_radius is given as a fraction of map size. Hideouts and
    rendezvous points are placed on free cells with mutual separation of
    at least size / 8.
    """
    rng = rng if rng is not None else np.random.default_rng()
    if size <= 0 or cell_target <= 0:
        raise ConfigError("size and cell_target must be positive")
    grid_n = max(16, int(round(size / cell_target)))

    obstacles = []
    for _ in range(n_obstacles):
        r = rng.uniform(obstacle_radius[0], obstacle_radius[1]) * size
        cx = rng.uniform(0.08 * size, 0.92 * size)
        cy = rng.uniform(0.08 * size, 0.92 * size)
        obstacles.append((cx, cy, r))
    obstacles = np.array(obstacles, dtype=np.float64).reshape(-1, 3)

    field_raw = gaussian_filter(rng.normal(size=(grid_n, grid_n)), sigma=grid_n / visibility_smoothness)
    lo, hi = field_raw.min(), field_raw.max()
    visibility = (field_raw - lo) / (hi - lo) if hi > lo else np.full_like(field_raw, 0.5)

    spec = MapSpec(
        size=size,
        obstacles=obstacles,
        visibility=visibility,
        hideouts=np.empty((0, 2)),
        rendezvous_points=np.empty((0, 2)),
    )
    sep = size / 8.0
    hideouts = _sample_clear_points(spec, n_hideouts, rng, sep, [])
    rendezvous = _sample_clear_points(spec, n_rendezvous, rng, sep, list(hideouts))
    return MapSpec(
        size=size,
        obstacles=obstacles,
        visibility=visibility,
        hideouts=hideouts,
        rendezvous_points=rendezvous,
    )
