"""Displacement-error metrics and the horizon-sweep evaluation driver.

Metrics operate on unit-scale coordinates (world units divided by map
size) so reported magnitudes are comparable across map sizes. Sample
aggregation uses exact summation (math.fsum), which makes every metric
invariant to sample-list ordering down to the last bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .diffusion import NoiseSchedule
from .errors import ConfigError, DataError, RangeError, ShapeError
from .guidance import ConstraintSet, InpaintMask, monte_carlo_sample
from .model import TrackModel
from .sim.episodes import EpisodeRecord
from .sim.maps import MapSpec
from .training import MODES, make_training_example

# Spacing between evaluation points within an episode, in timesteps.
EVAL_STRIDE = 10


# -- metrics -------------------------------------------------------------


def _stack_samples(samples, truth) -> tuple[np.ndarray, np.ndarray]:
    truth = np.asarray(truth, dtype=np.float64)
    if truth.ndim != 3 or truth.shape[-1] != 2:
        raise ShapeError(f"truth must be (agents, timesteps, 2), got {truth.shape}")
    if len(samples) == 0:
        raise ShapeError("need at least one sample")
    stack = np.stack([np.asarray(s, dtype=np.float64) for s in samples])
    if stack.shape[1:] != truth.shape:
        raise ShapeError(f"sample shape {stack.shape[1:]} != truth shape {truth.shape}")
    return stack, truth


def _per_sample_ade(stack: np.ndarray, truth: np.ndarray) -> list[float]:
    dists = np.sqrt(((stack - truth[None]) ** 2).sum(axis=-1))
    flat = dists.reshape(len(stack), -1)
    return [math.fsum(row) / flat.shape[1] for row in flat]


def ade(samples: Sequence[np.ndarray], truth: np.ndarray) -> float:
    """Mean Euclidean distance to truth over samples, agents, and timesteps."""
    stack, truth = _stack_samples(samples, truth)
    per = _per_sample_ade(stack, truth)
    return math.fsum(per) / len(per)


def min_ade(samples: Sequence[np.ndarray], truth: np.ndarray) -> float:
    """ADE of the closest sampled slate, minimized over whole joint slates."""
    stack, truth = _stack_samples(samples, truth)
    return min(_per_sample_ade(stack, truth))


def collision_rate(samples: Sequence[np.ndarray], map_spec: MapSpec) -> float:
    """Fraction of sampled states lying strictly inside any obstacle.

    Samples are unit-scale; they are lifted back to world units for the
    obstacle test.
    """
    stack = np.stack([np.asarray(s, dtype=np.float64) for s in samples])
    pts = stack.reshape(-1, 2) * map_spec.size
    if len(map_spec.obstacles) == 0 or len(pts) == 0:
        return 0.0
    return int(map_spec.inside_obstacle(pts).sum()) / len(pts)


# -- report --------------------------------------------------------------


@dataclass(frozen=True)
class HorizonStats:
    ade: float
    min_ade: float
    std_err: float  # SEM of per-point ADE across evaluation points


@dataclass(frozen=True)
class EvalReport:
    per_horizon: Mapping[int, HorizonStats]
    collision_rate: float
    n_samples: int
    mode: str

    def __post_init__(self):
        if not 0.0 <= self.collision_rate <= 1.0:
            raise DataError(f"collision_rate {self.collision_rate} outside [0, 1]")
        for h, stats in self.per_horizon.items():
            if stats.min_ade > stats.ade + 1e-9:
                raise DataError(f"min_ade exceeds ade at horizon {h}")


# -- sweep plumbing ------------------------------------------------------


def evaluation_points(episode_len: int, horizon: int, stride: int = EVAL_STRIDE) -> list[int]:
    """t_now values every `stride` steps whose future window still fits."""
    if horizon > episode_len:
        return []
    return list(range(0, episode_len - horizon + 1, stride))


def current_detection_mask(
    episode: EpisodeRecord, t_now: int, map_spec: MapSpec
) -> InpaintMask:
    """Pin slate timestep 0 to any detection made exactly at t_now."""
    entries = []
    for t, agent, x, y in episode.detections:
        if t == t_now:
            nx, ny = map_spec.normalize(np.array([x, y]))
            entries.append((int(agent), 0, float(nx), float(ny)))
    return InpaintMask(entries)


def stationary_baseline(
    episode: EpisodeRecord, t_now: int, horizon: int, map_spec: MapSpec
) -> np.ndarray:
    """Unit-scale slate freezing each agent at its last detection.

    Agents with no detection by t_now sit at the map center.
    """
    out = np.full((episode.n_agents, horizon, 2), 0.5)
    last: dict[int, tuple[int, float, float]] = {}
    for t, agent, x, y in episode.detections:
        if t <= t_now and (agent not in last or t >= last[agent][0]):
            last[int(agent)] = (int(t), float(x), float(y))
    for agent, (_, x, y) in last.items():
        out[agent, :, 0] = x / map_spec.size
        out[agent, :, 1] = y / map_spec.size
    return out


def report_from_samples(
    entries: Sequence[dict],
    episodes_by_id: Mapping[int, EpisodeRecord],
    map_spec: MapSpec,
    horizons: Sequence[int],
    *,
    mode: str = "multi-target-unknown-origin",
) -> EvalReport:
    """Score pre-drawn sample sets (unit coordinates) against ground truth.

    Each entry carries episode_id, t_now, and a (n, agents, horizon, 2)
    sample stack, as produced by the sampling command.
    """
    if not entries:
        raise DataError("no sample entries to evaluate")
    if not horizons:
        raise ConfigError("need at least one horizon")
    horizons = sorted({int(h) for h in horizons})
    n_samples = len(np.asarray(entries[0]["samples"]))
    per_point: dict[int, list[tuple[float, float]]] = {h: [] for h in horizons}
    inside = 0
    total = 0
    for entry in entries:
        ep_id, t_now = int(entry["episode_id"]), int(entry["t_now"])
        if ep_id not in episodes_by_id:
            raise DataError(f"samples reference unknown episode {ep_id}")
        episode = episodes_by_id[ep_id]
        stack = np.asarray(entry["samples"], dtype=np.float64)
        if stack.ndim != 4 or stack.shape[-1] != 2:
            raise ShapeError(f"sample stack must be (n, agents, horizon, 2), got {stack.shape}")
        if len(stack) != n_samples:
            raise DataError(
                f"episode {ep_id} t={t_now}: {len(stack)} samples, expected {n_samples}"
            )
        full = stack.shape[2]
        for h in horizons:
            if h < 1 or h > full:
                raise RangeError(f"horizon {h} outside [1, {full}]")
        if t_now + full > episode.episode_len:
            raise DataError(
                f"episode {ep_id}: window [{t_now}, {t_now + full}) overruns length "
                f"{episode.episode_len}"
            )
        unit_truth = episode.trajectories[:, t_now : t_now + full] / map_spec.size
        unit_samples = list(stack)
        for h in horizons:
            sliced = [s[:, :h] for s in unit_samples]
            per_point[h].append(
                (ade(sliced, unit_truth[:, :h]), min_ade(sliced, unit_truth[:, :h]))
            )
        pts = stack.reshape(-1, 2) * map_spec.size
        if len(map_spec.obstacles):
            inside += int(map_spec.inside_obstacle(pts).sum())
        total += len(pts)
    return _finalize(per_point, horizons, inside, total, n_samples, mode)


def _finalize(per_point, horizons, inside, total, n_samples, mode) -> EvalReport:
    stats = {}
    for h in horizons:
        ades = np.array([a for a, _ in per_point[h]])
        mins = np.array([m for _, m in per_point[h]])
        sem = float(ades.std(ddof=1) / math.sqrt(len(ades))) if len(ades) > 1 else 0.0
        stats[h] = HorizonStats(float(ades.mean()), float(mins.mean()), sem)
    return EvalReport(
        per_horizon=stats,
        collision_rate=inside / total,
        n_samples=n_samples,
        mode=mode,
    )


def horizon_sweep(
    model: TrackModel,
    dataset: Sequence[EpisodeRecord],
    horizons: Sequence[int],
    n_samples: int = 30,
    *,
    map_spec: MapSpec,
    schedule: NoiseSchedule,
    mode: str = "multi-target-unknown-origin",
    constraints: ConstraintSet | None = None,
    inpaint_current: bool = False,
    stride: int = EVAL_STRIDE,
    seed: int = 0,
    max_points: int | None = None,
) -> EvalReport:
    """Monte-Carlo metrics at several prediction horizons over a dataset.

    Evaluation points sit every `stride` timesteps through each episode;
    points whose future window would overrun the episode are skipped.
    Each point draws `n_samples` slates from a seed derived from
    (seed, episode index, t_now), so reruns — and paired runs of two
    models — see identical noise.
    """
    if not horizons:
        raise ConfigError("need at least one horizon")
    if n_samples < 1:
        raise ConfigError("n_samples must be positive")
    if mode not in MODES:
        raise ConfigError(f"mode must be one of {MODES}, got {mode!r}")
    full = model.config.horizon
    horizons = sorted({int(h) for h in horizons})
    for h in horizons:
        if h < 1 or h > full:
            raise RangeError(f"horizon {h} outside [1, {full}]")

    labeled = mode == "multi-target-known-origin"
    encoding = "per-agent" if labeled else "shared"
    constraints = constraints or ConstraintSet()

    points = [
        (ep_idx, episode, t_now)
        for ep_idx, episode in enumerate(dataset)
        for t_now in evaluation_points(episode.episode_len, full, stride)
    ]
    if max_points is not None:
        points = points[:max_points]
    if not points:
        raise DataError(
            f"no evaluation points: no episode fits a {full}-step future window"
        )

    per_point: dict[int, list[tuple[float, float]]] = {h: [] for h in horizons}
    inside = 0
    total = 0
    for ep_idx, episode, t_now in points:
        history, slate = make_training_example(
            episode, t_now, full, map_spec, model.encoder.max_episode_len, labeled
        )
        predict = model.predictor(history, encoding, n_agents=episode.n_agents)
        mask = (
            current_detection_mask(episode, t_now, map_spec)
            if inpaint_current
            else InpaintMask()
        )
        rng = np.random.default_rng(
            np.random.SeedSequence(entropy=seed, spawn_key=(ep_idx, t_now))
        )
        samples = monte_carlo_sample(
            predict, schedule, (episode.n_agents, full, 2), constraints, mask,
            n_samples, rng,
        )
        unit_samples = [(s + 1.0) * 0.5 for s in samples]
        unit_truth = (slate + 1.0) * 0.5
        for h in horizons:
            sliced = [s[:, :h] for s in unit_samples]
            per_point[h].append((ade(sliced, unit_truth[:, :h]), min_ade(sliced, unit_truth[:, :h])))
        pts = np.concatenate([s.reshape(-1, 2) for s in unit_samples]) * map_spec.size
        if len(map_spec.obstacles):
            inside += int(map_spec.inside_obstacle(pts).sum())
        total += len(pts)

    return _finalize(per_point, horizons, inside, total, n_samples, mode)
