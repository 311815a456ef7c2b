"""Episode generation: evaders cross the map while an unmodeled search
effort produces sparse detections of them.

Behaviors:

* meet-then-go: agents start near a common origin, converge on one
  shared rendezvous point (early arrivals wait until everyone is
  there), then split toward their own goal hideouts.
* direct: each agent heads straight to its own goal hideout.

Goals are drawn without replacement, so agents never share a hideout.
Multi-target detections are count-based — each agent's number of
detected timesteps is drawn uniformly from rate ± 1 percentage point of
the episode length — while single-target episodes flip an independent
per-timestep Bernoulli coin at the configured rate.

All trajectories are resampled so one timestep never moves farther than
`max_step` world units.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from ..errors import ConfigError, DataError
from .maps import MapSpec
from .pathfinding import a_star_path

MAX_STEP_WORLD = 15.0  # world units per timestep, all regimes
BEHAVIORS = ("meet-then-go", "direct")
RATE_BAND = 0.01  # multi-target count band: rate ± 1 percentage point


@dataclass(frozen=True)
class EpisodeConfig:
    n_agents: int = 3
    episode_len: int = 240
    max_step: float = MAX_STEP_WORLD
    visibility_weight: float = 200.0
    detection_rate: float = 0.11
    behavior: str = "mixed"  # meet-then-go | direct | mixed (coin flip per episode)
    spawn_jitter: float = 40.0

    def __post_init__(self):
        if self.n_agents < 1:
            raise ConfigError("n_agents must be >= 1")
        if self.episode_len < 2:
            raise ConfigError("episode_len must be >= 2")
        if self.max_step <= 0:
            raise ConfigError("max_step must be positive")
        if not (0.0 < self.detection_rate < 1.0):
            raise ConfigError(
                f"detection_rate must lie in (0, 1), got {self.detection_rate}; "
                "1.0 would hand the model the full trajectory"
            )
        if self.behavior not in BEHAVIORS + ("mixed",):
            raise ConfigError(f"behavior must be one of {BEHAVIORS + ('mixed',)}, got {self.behavior!r}")


@dataclass
class EpisodeRecord:
    episode_id: int
    trajectories: np.ndarray  # (A, L, 2) world coords
    detections: list[tuple[int, int, float, float]]  # (t, agent_id, x, y)
    behavior: str
    goal_ids: list[int]
    map_id: str
    detection_rate: float
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.trajectories = np.asarray(self.trajectories, dtype=np.float64)
        if self.trajectories.ndim != 3 or self.trajectories.shape[-1] != 2:
            raise DataError(f"trajectories must be (A, L, 2), got {self.trajectories.shape}")
        if self.behavior not in BEHAVIORS:
            raise DataError(f"unknown behavior label {self.behavior!r}")
        if len(self.goal_ids) != self.trajectories.shape[0]:
            raise DataError("need exactly one goal id per agent")
        a, length, _ = self.trajectories.shape
        for t, agent, x, y in self.detections:
            if not (0 <= t < length and 0 <= agent < a):
                raise DataError(f"detection ({t}, {agent}) outside episode bounds")

    @property
    def n_agents(self) -> int:
        return self.trajectories.shape[0]

    @property
    def episode_len(self) -> int:
        return self.trajectories.shape[1]

    def validate_against(self, map_spec: MapSpec, max_step: float = MAX_STEP_WORLD) -> None:
        """Hard invariants: obstacle-free, speed-bounded, detections on-track."""
        flat = self.trajectories.reshape(-1, 2)
        if map_spec.inside_obstacle(flat).any():
            raise DataError(f"episode {self.episode_id}: trajectory state inside an obstacle")
        steps = np.linalg.norm(np.diff(self.trajectories, axis=1), axis=-1)
        if steps.size and steps.max() > max_step:
            raise DataError(f"episode {self.episode_id}: step of {steps.max():.3f} exceeds bound {max_step}")
        for t, agent, x, y in self.detections:
            if not np.allclose(self.trajectories[agent, t], (x, y)):
                raise DataError(f"episode {self.episode_id}: detection at t={t} not on agent {agent}'s track")


def _resample_speed_limited(waypoints: np.ndarray, max_step: float) -> np.ndarray:
    """Walk the polyline at max_step per tick (last leg may be shorter).

    The per-tick budget is shaved by one part in 10^12 so accumulated
    rounding when a tick crosses waypoints can never push a step above
    the stated bound.
    """
    pts = [waypoints[0].copy()]
    seg = 0
    pos = waypoints[0].astype(np.float64).copy()
    tick_budget = max_step * (1.0 - 1e-12)
    while seg < len(waypoints) - 1:
        budget = tick_budget
        while budget > 1e-12 and seg < len(waypoints) - 1:
            target = waypoints[seg + 1]
            d = float(np.linalg.norm(target - pos))
            if d <= budget:
                pos = target.astype(np.float64).copy()
                budget -= d
                seg += 1
            else:
                pos = pos + (target - pos) * (budget / d)
                budget = 0.0
        pts.append(pos.copy())
    return np.array(pts)


def _fit_length(track: np.ndarray, length: int) -> np.ndarray:
    """Pad by holding the final position, or truncate, to exactly `length`."""
    if len(track) >= length:
        return track[:length]
    pad = np.repeat(track[-1][None, :], length - len(track), axis=0)
    return np.concatenate([track, pad], axis=0)


def _spawn_near(map_spec: MapSpec, anchor: np.ndarray, jitter: float, rng: np.random.Generator) -> np.ndarray:
    # Margin 1.0 > sqrt(0.5): a point this clear of every obstacle stays
    # outside even after its coordinates are rounded to integers on disk.
    for _ in range(200):
        p = anchor + rng.uniform(-jitter, jitter, size=2)
        p = np.clip(p, 2.0, map_spec.size - 2.0)
        r, c = map_spec.world_to_cell(p)
        if not map_spec.blocked_grid()[r, c] and not map_spec.inside_obstacle(p, margin=1.0)[0]:
            return p
    return anchor.copy()


def generate_episode(
    map_spec: MapSpec,
    config: EpisodeConfig,
    episode_id: int,
    rng: np.random.Generator,
) -> EpisodeRecord:
    if len(map_spec.hideouts) < config.n_agents:
        raise DataError(
            f"map has {len(map_spec.hideouts)} hideouts but {config.n_agents} agents "
            "need distinct goals"
        )
    if len(map_spec.rendezvous_points) == 0:
        raise DataError("map needs at least one rendezvous point")

    behavior = config.behavior
    if behavior == "mixed":
        behavior = BEHAVIORS[int(rng.integers(2))]
    goal_ids = rng.choice(len(map_spec.hideouts), size=config.n_agents, replace=False)
    goals = map_spec.hideouts[goal_ids]

    free = map_spec.free_cells()
    origin = map_spec.cell_center(*free[rng.integers(len(free))])
    spawns = [_spawn_near(map_spec, origin, config.spawn_jitter, rng) for _ in range(config.n_agents)]

    meta: dict = {"spawns": [s.tolist() for s in spawns]}
    if behavior == "direct":
        tracks = [
            _resample_speed_limited(
                a_star_path(map_spec, s, g, config.visibility_weight), config.max_step
            )
            for s, g in zip(spawns, goals)
        ]
        meta["meet_t"] = None
    else:
        rendezvous = map_spec.rendezvous_points[rng.integers(len(map_spec.rendezvous_points))]
        meta["rendezvous"] = rendezvous.tolist()
        legs_in = [
            _resample_speed_limited(
                a_star_path(map_spec, s, rendezvous, config.visibility_weight), config.max_step
            )
            for s in spawns
        ]
        meet_t = max(len(leg) for leg in legs_in)
        meta["meet_t"] = int(min(meet_t - 1, config.episode_len - 1))
        tracks = []
        for leg, goal in zip(legs_in, goals):
            wait = np.repeat(leg[-1][None, :], meet_t - len(leg), axis=0)
            onward = _resample_speed_limited(
                np.concatenate([leg[-1][None, :], a_star_path(map_spec, leg[-1], goal, config.visibility_weight)]),
                config.max_step,
            )
            tracks.append(np.concatenate([leg, wait, onward[1:]], axis=0))

    trajectories = np.stack([_fit_length(t, config.episode_len) for t in tracks])
    detections = _count_band_detections(trajectories, config.detection_rate, rng)
    record = EpisodeRecord(
        episode_id=episode_id,
        trajectories=trajectories,
        detections=detections,
        behavior=behavior,
        goal_ids=[int(g) for g in goal_ids],
        map_id=map_spec.map_id,
        detection_rate=config.detection_rate,
        meta=meta,
    )
    record.validate_against(map_spec, config.max_step)
    return record


def _count_band_detections(trajectories: np.ndarray, rate: float, rng: np.random.Generator):
    """Per agent: k ~ Uniform{ceil((rate-band)L) .. floor((rate+band)L)} timesteps."""
    a, length, _ = trajectories.shape
    lo = int(np.ceil((rate - RATE_BAND) * length))
    hi = int(np.floor((rate + RATE_BAND) * length))
    lo = max(0, lo)
    hi = max(lo, hi)
    detections = []
    for agent in range(a):
        k = int(rng.integers(lo, hi + 1))
        for t in sorted(rng.choice(length, size=k, replace=False).tolist()):
            x, y = trajectories[agent, t]
            detections.append((int(t), int(agent), float(x), float(y)))
    detections.sort(key=lambda d: (d[0], d[1]))
    return detections


def generate_single_target_episode(
    map_spec: MapSpec,
    config: EpisodeConfig,
    episode_id: int,
    rng: np.random.Generator,
) -> EpisodeRecord:
    """One agent walking directly to a goal hideout, Bernoulli detections."""
    if config.n_agents != 1:
        raise ConfigError("single-target episodes require n_agents = 1")
    goal_id = int(rng.integers(len(map_spec.hideouts)))
    free = map_spec.free_cells()
    start = map_spec.cell_center(*free[rng.integers(len(free))])
    spawn = _spawn_near(map_spec, start, config.spawn_jitter, rng)
    track = _resample_speed_limited(
        a_star_path(map_spec, spawn, map_spec.hideouts[goal_id], config.visibility_weight),
        config.max_step,
    )
    track = _fit_length(track, config.episode_len)

    hits = rng.random(config.episode_len) < config.detection_rate
    detections = [
        (int(t), 0, float(track[t, 0]), float(track[t, 1]))
        for t in np.nonzero(hits)[0]
    ]
    record = EpisodeRecord(
        episode_id=episode_id,
        trajectories=track[None, :, :],
        detections=detections,
        behavior="direct",
        goal_ids=[goal_id],
        map_id=map_spec.map_id,
        detection_rate=config.detection_rate,
        meta={"spawns": [spawn.tolist()], "meet_t": None},
    )
    record.validate_against(map_spec, config.max_step)
    return record


def generate_dataset(
    map_spec: MapSpec,
    config: EpisodeConfig,
    n_episodes: int,
    seed: int,
    style: str = "multi",
) -> list[EpisodeRecord]:
    """Deterministic batch: episode k always uses substream k of `seed`."""
    if style not in ("multi", "single"):
        raise ConfigError(f"style must be 'multi' or 'single', got {style!r}")
    if style == "single" and config.n_agents != 1:
        config = replace(config, n_agents=1)
    streams = np.random.SeedSequence(seed).spawn(n_episodes)
    make = generate_single_target_episode if style == "single" else generate_episode
    return [make(map_spec, config, k, np.random.default_rng(streams[k])) for k in range(n_episodes)]
