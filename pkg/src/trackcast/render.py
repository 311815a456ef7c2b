"""Static PNG rendering of maps, tracks, detections, and sampled futures."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
from matplotlib.collections import LineCollection

from .sim.episodes import EpisodeRecord
from .sim.maps import MapSpec

AGENT_COLORS = ("tab:green", "tab:orange", "tab:purple", "tab:brown", "tab:pink")


def _draw_map(ax, map_spec: MapSpec) -> None:
    ax.imshow(
        map_spec.visibility,
        origin="lower",
        extent=(0, map_spec.size, 0, map_spec.size),
        cmap="Greys",
        vmin=0.0,
        vmax=1.0,
        alpha=0.45,
        interpolation="bilinear",
    )
    for cx, cy, r in map_spec.obstacles:
        ax.add_patch(plt.Circle((cx, cy), r, color="#2b2b2b", zorder=3))
    ax.scatter(
        map_spec.hideouts[:, 0], map_spec.hideouts[:, 1],
        marker="*", s=90, color="gold", edgecolors="black", zorder=4, label="hideout",
    )
    ax.set_xlim(0, map_spec.size)
    ax.set_ylim(0, map_spec.size)
    ax.set_aspect("equal")


def _draw_samples(ax, samples: np.ndarray, map_spec: MapSpec) -> None:
    """Sampled futures as polylines with a blue-to-red time gradient."""
    n, agents, horizon, _ = samples.shape
    cmap = plt.get_cmap("coolwarm")
    for s in range(n):
        for a in range(agents):
            pts = samples[s, a] * map_spec.size
            segs = np.stack([pts[:-1], pts[1:]], axis=1)
            lc = LineCollection(
                segs, colors=cmap(np.linspace(0, 1, max(horizon - 1, 1))),
                linewidths=0.7, alpha=0.5, zorder=5,
            )
            ax.add_collection(lc)


def render_point(
    map_spec: MapSpec,
    episode: EpisodeRecord,
    t_now: int,
    out_path,
    samples: np.ndarray | None = None,
) -> Path:
    """One evaluation-point image: map, truth, detections, hypotheses.

    samples, when given, is (n, agents, horizon, 2) in unit coordinates.
    """
    out_path = Path(out_path)
    fig, ax = plt.subplots(figsize=(6.4, 6.4), dpi=120)
    _draw_map(ax, map_spec)
    for a in range(episode.n_agents):
        color = AGENT_COLORS[a % len(AGENT_COLORS)]
        track = episode.trajectories[a]
        ax.plot(track[:, 0], track[:, 1], color=color, linewidth=1.4, zorder=6)
        ax.plot(*track[t_now], marker="o", color=color, markersize=6, zorder=7)
    past = [(t, a, x, y) for t, a, x, y in episode.detections if t <= t_now]
    if past:
        xs = [x for _, _, x, _ in past]
        ys = [y for _, _, _, y in past]
        ax.scatter(xs, ys, marker="x", s=45, color="black", zorder=8, label="detection")
    if samples is not None:
        _draw_samples(ax, np.asarray(samples, dtype=np.float64), map_spec)
    ax.set_title(f"episode {episode.episode_id}, t = {t_now}")
    ax.set_xticks([])
    ax.set_yticks([])
    fig.tight_layout()
    fig.savefig(out_path)
    plt.close(fig)
    return out_path


def render_sample_file(
    map_spec: MapSpec,
    episodes: dict[int, EpisodeRecord],
    entries: list[dict],
    out_dir,
) -> list[Path]:
    """One image per sample-file entry, deterministically named."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for entry in entries:
        episode = episodes[entry["episode_id"]]
        name = f"ep{entry['episode_id']:04d}_t{entry['t_now']:03d}.png"
        paths.append(render_point(
            map_spec, episode, entry["t_now"], out_dir / name, samples=entry["samples"],
        ))
    return paths
