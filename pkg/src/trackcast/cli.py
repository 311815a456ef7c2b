"""Command-line pipeline: generate data, train, sample, evaluate, render.

Every command reads an optional YAML config (--config), applies flag
overrides, echoes the resolved config into --out, and stamps artifacts
with the config hash and seed.
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

import numpy as np

from .config import RunConfig, config_hash, load_config, save_resolved, with_overrides
from .dataio import (
    load_dataset,
    load_map,
    load_samples,
    report_table,
    save_dataset,
    save_map,
    save_report,
    save_samples,
)
from .diffusion import default_schedule, schedule_from_betas
from .errors import TrackcastError, UnreachableError, VersionError
from .evaluation import evaluation_points, report_from_samples
from .guidance import ConstraintSet, InpaintMask, monte_carlo_sample
from .nets import DenoiserConfig
from .sim import HAVE_COMPILED, a_star_path, generate_dataset, generate_map, path_length
from .sim.episodes import EpisodeConfig
from .training import MODES, TrainConfig, Trainer
from .model import TrackModel
from .checkpoint import load_checkpoint, restore_model
from .evaluation import current_detection_mask
from .training import make_training_example

# Detection-rate regimes, as fractions of timesteps observed.
PRISON_REGIMES = {"low": 0.129, "med": 0.440, "high": 0.631}
SMUGGLER_REGIMES = {"low": 0.138, "high": 0.315}

# Short CLI spellings for the training/encoding modes.
CLI_MODES = {
    "single": "single-target",
    "multi-known-origin": "multi-target-known-origin",
    "multi-unknown-origin": "multi-target-unknown-origin",
}


def _resolve(args, overrides: dict) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    return with_overrides(cfg, {"seed": args.seed, **overrides})


def _prepare_out(cfg: RunConfig, args) -> tuple[Path, str]:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_resolved(cfg, out)
    return out, config_hash(cfg)


def _load_world(data_dir: Path):
    map_spec = load_map(data_dir / "map.npz")
    episodes, header = load_dataset(data_dir / "episodes.jsonl", map_spec)
    return map_spec, episodes, header


# -- gen-data ---------------------------------------------------------------


def cmd_gen_data(args) -> int:
    overrides = {
        "episodes.style": args.mode,
        "episodes.n_agents": args.agents,
        "episodes.n_episodes": args.episodes,
        "episodes.detection_rate": args.detection_rate,
        "episodes.behavior": args.behavior,
        "episodes.episode_len": args.episode_len,
    }
    if args.profile == "smuggler":
        overrides["map.n_obstacles"] = 6
        regimes = SMUGGLER_REGIMES
    else:
        regimes = PRISON_REGIMES
    if args.regime is not None:
        if args.regime not in regimes:
            raise TrackcastError(
                f"profile {args.profile!r} has regimes {sorted(regimes)}, not {args.regime!r}"
            )
        overrides["episodes.detection_rate"] = regimes[args.regime]
    cfg = _resolve(args, overrides)
    if cfg.episodes.style == "single" and cfg.episodes.n_agents != 1:
        cfg = with_overrides(cfg, {"episodes.n_agents": 1})
        print("note: single-target style forces one agent")
    out, digest = _prepare_out(cfg, args)

    map_rng = np.random.default_rng(np.random.SeedSequence(entropy=cfg.seed, spawn_key=(0,)))
    map_spec = generate_map(
        size=cfg.map.size,
        cell_target=cfg.map.cell_target,
        n_obstacles=cfg.map.n_obstacles,
        n_hideouts=cfg.map.n_hideouts,
        n_rendezvous=cfg.map.n_rendezvous,
        rng=map_rng,
    )
    ep_cfg = EpisodeConfig(
        n_agents=cfg.episodes.n_agents,
        episode_len=cfg.episodes.episode_len,
        detection_rate=cfg.episodes.detection_rate,
        behavior=cfg.episodes.behavior,
    )
    episodes = generate_dataset(
        map_spec, ep_cfg, cfg.episodes.n_episodes, seed=cfg.seed, style=cfg.episodes.style
    )
    save_map(out / "map.npz", map_spec, seed=cfg.seed, config_hash=digest)
    save_dataset(
        out / "episodes.jsonl", episodes, map_spec,
        seed=cfg.seed, config_hash=digest, style=cfg.episodes.style,
    )
    realized = np.mean([
        len(ep.detections) / (ep.n_agents * ep.episode_len) for ep in episodes
    ])
    print(f"map: {out / 'map.npz'} (fingerprint {map_spec.fingerprint()})")
    print(
        f"episodes: {out / 'episodes.jsonl'} ({len(episodes)} x {cfg.episodes.n_agents} agents, "
        f"style={cfg.episodes.style})"
    )
    print(
        f"detection rate: declared {cfg.episodes.detection_rate:.3f}, "
        f"realized mean {realized:.4f}"
    )
    print(f"config hash {digest}, seed {cfg.seed}")
    return 0


# -- train --------------------------------------------------------------------


def cmd_train(args) -> int:
    overrides = {
        "train.mode": CLI_MODES.get(args.mode, args.mode) if args.mode else None,
        "train.epochs": args.epochs,
        "train.batch_size": args.batch_size,
    }
    cfg = _resolve(args, overrides)
    out, digest = _prepare_out(cfg, args)
    map_spec, episodes, header = _load_world(Path(args.data))

    model = TrackModel(
        DenoiserConfig(
            base_channels=cfg.train.base_channels,
            depth=cfg.train.depth,
            attention_heads=cfg.train.attention_heads,
            head_dim=cfg.train.head_dim,
            cond_dim=cfg.train.cond_dim,
            horizon=cfg.train.horizon,
        ),
        max_episode_len=cfg.episodes.episode_len,
    )
    schedule = default_schedule(cfg.train.diffusion_steps)
    train_cfg = TrainConfig(
        batch_size=cfg.train.batch_size,
        epochs=cfg.train.epochs,
        learning_rate=cfg.train.learning_rate,
        ema_decay=cfg.train.ema_decay,
        seed=cfg.seed,
        horizon=cfg.train.horizon,
        mode=cfg.train.mode,
        checkpoint_every=cfg.train.checkpoint_every,
    )
    trainer = Trainer(
        model, schedule, train_cfg,
        log_path=out / "train_log.jsonl",
        run_meta={
            "map_fingerprint": map_spec.fingerprint(),
            "config_hash": digest,
            "seed": cfg.seed,
        },
    )
    start = time.perf_counter()
    losses = trainer.fit(episodes, map_spec, out_dir=out)
    elapsed = time.perf_counter() - start
    first = np.mean(losses[: max(1, len(losses) // 10)])
    last = np.mean(losses[-max(1, len(losses) // 10):])
    print(f"trained {trainer.global_step} steps in {elapsed:.1f}s (mode={train_cfg.mode})")
    print(f"loss: first-decile mean {first:.4f}, last-decile mean {last:.4f}")
    print(f"final checkpoint: {out / 'final.ckpt'}")
    return 0


# -- sample --------------------------------------------------------------------


def cmd_sample(args) -> int:
    overrides = {
        "sample.n_samples": args.n,
        "sample.guided": args.guided,
        "sample.inpaint_current": args.inpaint_current,
        "sample.max_points": args.max_points,
    }
    cfg = _resolve(args, overrides)
    out, digest = _prepare_out(cfg, args)
    map_spec, episodes, _ = _load_world(Path(args.data))

    bundle = load_checkpoint(args.checkpoint)
    trained_fp = bundle.meta.get("map_fingerprint")
    if trained_fp is not None and trained_fp != map_spec.fingerprint():
        raise VersionError(
            f"{args.checkpoint}: checkpoint was trained against map {trained_fp}, "
            f"dataset map is {map_spec.fingerprint()}"
        )
    model = restore_model(bundle)
    schedule = schedule_from_betas(bundle.meta["schedule"]["betas"])
    mode = bundle.meta["train_config"]["mode"]
    labeled = mode == "multi-target-known-origin"
    encoding = "per-agent" if labeled else "shared"
    horizon = model.config.horizon

    if cfg.sample.guided:
        constraints = ConstraintSet(
            motion_weight=cfg.sample.motion_weight,
            obstacle_weight=cfg.sample.obstacle_weight,
            obstacles=map_spec.normalized_obstacles(),
            margin=cfg.sample.margin,
            grad_steps=cfg.sample.grad_steps,
            step_size=cfg.sample.step_size,
        )
    else:
        constraints = ConstraintSet()

    points = [
        (ep_idx, ep, t_now)
        for ep_idx, ep in enumerate(episodes)
        for t_now in evaluation_points(ep.episode_len, horizon, cfg.eval.stride)
    ]
    if cfg.sample.max_points is not None:
        points = points[: cfg.sample.max_points]

    entries = []
    for ep_idx, episode, t_now in points:
        history, _ = make_training_example(
            episode, t_now, horizon, map_spec, model.encoder.max_episode_len, labeled
        )
        predict = model.predictor(history, encoding, n_agents=episode.n_agents)
        mask = (
            current_detection_mask(episode, t_now, map_spec)
            if cfg.sample.inpaint_current
            else InpaintMask()
        )
        rng = np.random.default_rng(
            np.random.SeedSequence(entropy=cfg.seed, spawn_key=(ep_idx, t_now))
        )
        slates = monte_carlo_sample(
            predict, schedule, (episode.n_agents, horizon, 2), constraints, mask,
            cfg.sample.n_samples, rng,
        )
        entries.append({
            "episode_id": episode.episode_id,
            "t_now": t_now,
            "samples": (np.stack(slates) + 1.0) * 0.5,  # model space -> unit
        })
    save_samples(out / "samples.jsonl", entries, {
        "seed": cfg.seed,
        "config_hash": digest,
        "mode": mode,
        "guided": bool(cfg.sample.guided),
        "inpaint_current": bool(cfg.sample.inpaint_current),
        "n_samples": cfg.sample.n_samples,
        "map_fingerprint": map_spec.fingerprint(),
    })
    print(
        f"samples: {out / 'samples.jsonl'} ({len(entries)} evaluation points x "
        f"{cfg.sample.n_samples} samples, guided={cfg.sample.guided})"
    )
    return 0


# -- eval ----------------------------------------------------------------------


def cmd_eval(args) -> int:
    overrides = {"eval.horizons": args.horizons}
    cfg = _resolve(args, overrides)
    out, digest = _prepare_out(cfg, args)
    map_spec, episodes, _ = _load_world(Path(args.data))
    entries, header = load_samples(args.samples)
    horizons = [h for h in cfg.eval.horizons]
    max_h = int(np.asarray(entries[0]["samples"]).shape[2]) if entries else 0
    horizons = [h for h in horizons if h <= max_h] or [max_h]
    report = report_from_samples(
        entries, {ep.episode_id: ep for ep in episodes}, map_spec, horizons,
        mode=header.get("mode", "multi-target-unknown-origin"),
    )
    save_report(out / "report.json", report, seed=cfg.seed, config_hash=digest)
    (out / "report.tsv").write_text(report_table(report))
    print(report_table(report), end="")
    print(f"collision rate: {report.collision_rate:.5f}")
    print(f"report: {out / 'report.json'}")
    return 0


# -- render ----------------------------------------------------------------------


def cmd_render(args) -> int:
    cfg = _resolve(args, {})
    out, _ = _prepare_out(cfg, args)
    map_spec, episodes, _ = _load_world(Path(args.data))
    from .render import render_sample_file

    entries, _ = load_samples(args.samples)
    paths = render_sample_file(
        map_spec, {ep.episode_id: ep for ep in episodes}, entries, out
    )
    print(f"rendered {len(paths)} images under {out}")
    return 0


# -- bench-astar --------------------------------------------------------------------


def cmd_bench_astar(args) -> int:
    cfg = _resolve(args, {})
    rng = np.random.default_rng(cfg.seed)
    map_spec = generate_map(
        size=cfg.map.size, n_obstacles=cfg.map.n_obstacles, rng=rng
    )
    free = map_spec.free_cells()
    pairs = []
    while len(pairs) < args.pairs:
        s, g = free[rng.integers(len(free))], free[rng.integers(len(free))]
        if not np.array_equal(s, g):
            pairs.append((map_spec.cell_center(*s), map_spec.cell_center(*g)))

    def run(force_fallback: bool):
        lengths, t0 = [], time.perf_counter()
        solved = 0
        for start, goal in pairs:
            try:
                path = a_star_path(map_spec, start, goal, force_fallback=force_fallback)
            except UnreachableError:
                lengths.append(None)
                continue
            lengths.append(path_length(path))
            solved += 1
        return time.perf_counter() - t0, lengths, solved

    t_fallback, len_fb, solved = run(force_fallback=True)
    print(f"pure-python: {t_fallback:.3f}s for {len(pairs)} queries ({solved} reachable)")
    if HAVE_COMPILED:
        t_compiled, len_c, _ = run(force_fallback=False)
        agree = all(
            (a is None and b is None) or (a is not None and b is not None and a == b)
            for a, b in zip(len_c, len_fb)
        )
        print(f"compiled:    {t_compiled:.3f}s for {len(pairs)} queries")
        print(f"speedup: {t_fallback / t_compiled:.1f}x, identical path lengths: {agree}")
    else:
        print("compiled kernel unavailable; only the fallback was timed")
    return 0


# -- parser ------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="trackcast",
        description="Sparse-detection trajectory forecasting pipeline.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="YAML config file")
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        p.add_argument("--out", default="trackcast-out", help="output directory")

    p = sub.add_parser("gen-data", help="generate a map plus an episode dataset")
    common(p)
    p.add_argument("--mode", choices=("multi", "single"), default=None,
                   help="multi-target count-band or single-target Bernoulli detections")
    p.add_argument("--agents", type=int, default=None)
    p.add_argument("--episodes", type=int, default=None)
    rate = p.add_mutually_exclusive_group()
    rate.add_argument("--detection-rate", type=float, default=None)
    rate.add_argument("--regime", choices=("low", "med", "high"), default=None,
                      help="named detection-rate regime")
    p.add_argument("--profile", choices=("prison", "smuggler"), default="prison",
                   help="map density / regime table")
    p.add_argument("--behavior", choices=("meet-then-go", "direct", "mixed"), default=None)
    p.add_argument("--episode-len", type=int, default=None)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train the denoiser on a dataset")
    common(p)
    p.add_argument("--data", required=True, help="directory holding map.npz + episodes.jsonl")
    p.add_argument("--mode", choices=tuple(CLI_MODES) + MODES, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sample", help="draw Monte-Carlo futures at evaluation points")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--n", type=int, default=None, help="samples per evaluation point")
    p.add_argument("--guided", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--inpaint-current", action="store_true", default=None,
                   help="pin slates to detections made exactly at t_now")
    p.add_argument("--max-points", type=int, default=None)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("eval", help="score a sample file against its dataset")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--samples", required=True)
    p.add_argument("--horizons", type=int, nargs="+", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("render", help="draw map/track/sample images")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--samples", required=True)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("bench-astar", help="time the compiled grid kernel vs the fallback")
    common(p)
    p.add_argument("--pairs", type=int, default=20, help="number of start/goal queries")
    p.set_defaults(func=cmd_bench_astar)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except TrackcastError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
