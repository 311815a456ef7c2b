"""Declarative run configuration: strict YAML, defaults, overrides, hashing.

A config file is a mapping of parameter groups (map, episodes, train,
sample, eval) plus a top-level seed. Unknown keys anywhere are rejected
so typos fail loudly instead of silently running defaults. The resolved
config is echoed into every output directory, and its hash is embedded
in every artifact.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import yaml

from .errors import ConfigError


@dataclass(frozen=True)
class MapGroup:
    size: float = 2428.0          # world extent per side
    n_obstacles: int = 18         # circular keep-out regions
    n_hideouts: int = 5           # candidate goal points
    n_rendezvous: int = 4         # candidate meeting points
    cell_target: float = 8.0      # world units per planning cell


@dataclass(frozen=True)
class EpisodeGroup:
    style: str = "multi"          # multi (count-band detections) | single (Bernoulli)
    n_agents: int = 3
    n_episodes: int = 100
    episode_len: int = 240
    detection_rate: float = 0.11
    behavior: str = "mixed"       # meet-then-go | direct | mixed


@dataclass(frozen=True)
class TrainGroup:
    mode: str = "multi-target-unknown-origin"
    epochs: int = 50
    batch_size: int = 16
    learning_rate: float = 2e-4
    diffusion_steps: int = 100
    horizon: int = 60
    base_channels: int = 32
    depth: int = 2
    attention_heads: int = 4
    head_dim: int = 16
    cond_dim: int = 64
    checkpoint_every: int = 0     # steps between interim checkpoints; 0 = final only
    ema_decay: float | None = None


@dataclass(frozen=True)
class SampleGroup:
    n_samples: int = 30
    guided: bool = True
    inpaint_current: bool = False
    motion_weight: float = 0.0
    obstacle_weight: float = 1.0
    margin: float = 0.02          # normalized-space clearance added to radii
    grad_steps: int = 2
    step_size: float = 1e-2
    max_points: int | None = None  # cap on evaluation points; None = all


@dataclass(frozen=True)
class EvalGroup:
    horizons: tuple[int, ...] = (10, 20, 30, 40, 50, 60)
    stride: int = 10              # timesteps between evaluation points


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    map: MapGroup = field(default_factory=MapGroup)
    episodes: EpisodeGroup = field(default_factory=EpisodeGroup)
    train: TrainGroup = field(default_factory=TrainGroup)
    sample: SampleGroup = field(default_factory=SampleGroup)
    eval: EvalGroup = field(default_factory=EvalGroup)


_GROUPS = {
    "map": MapGroup,
    "episodes": EpisodeGroup,
    "train": TrainGroup,
    "sample": SampleGroup,
    "eval": EvalGroup,
}


def _coerce(cls, name: str, value, where: str):
    hint = {f.name: f.type for f in fields(cls)}[name]
    if value is None:
        return None
    if hint == "float" and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    if hint == "float | None" and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    if hint.startswith("tuple"):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{where}.{name}: expected a list")
        return tuple(value)
    return value


def _build_group(cls, data, where: str):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected a mapping of parameters")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}")
    return cls(**{k: _coerce(cls, k, v, where) for k, v in data.items()})


def config_from_dict(data: dict | None) -> RunConfig:
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError("config root must be a mapping")
    unknown = sorted(set(data) - set(_GROUPS) - {"seed"})
    if unknown:
        raise ConfigError(f"config: unknown top-level keys {unknown}")
    seed = data.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool):
        raise ConfigError(f"config: seed must be an integer, got {seed!r}")
    groups = {name: _build_group(cls, data.get(name), name) for name, cls in _GROUPS.items()}
    return RunConfig(seed=seed, **groups)


def load_config(path) -> RunConfig:
    text = Path(path).read_text()
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as err:
        raise ConfigError(f"{path}: invalid YAML ({err})") from err
    return config_from_dict(data)


def with_overrides(config: RunConfig, overrides: dict[str, object]) -> RunConfig:
    """Apply dotted-path overrides (e.g. {"episodes.n_agents": 2}).

    None values are skipped so optional CLI flags pass through untouched.
    """
    data = asdict(config)
    for key, value in overrides.items():
        if value is None:
            continue
        parts = key.split(".")
        node = data
        for part in parts[:-1]:
            if part not in node or not isinstance(node[part], dict):
                raise ConfigError(f"override {key!r}: no group named {part!r}")
            node = node[part]
        if parts[-1] not in node:
            raise ConfigError(f"override {key!r}: no such field")
        node[parts[-1]] = value
    return config_from_dict(data)


def config_hash(config: RunConfig) -> str:
    """Stable 16-hex-digit digest of the fully resolved config."""
    blob = json.dumps(asdict(config), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def save_resolved(config: RunConfig, out_dir) -> Path:
    """Echo the resolved config (every field explicit) into out_dir."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "config.yaml"
    data = asdict(config)
    data["eval"]["horizons"] = list(data["eval"]["horizons"])
    path.write_text(yaml.safe_dump(data, sort_keys=True))
    return path
