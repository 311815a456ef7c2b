"""DDPM training loop: noisy-slate construction, noise regression, and
reproducible batching.

Randomness is derived statelessly: the per-epoch example layout comes
from (seed, epoch) and the per-step noise from (seed, global_step), so
resuming from a checkpoint replays the exact same draws an uninterrupted
run would have made — no RNG state needs serializing.
"""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch

from .checkpoint import CheckpointBundle, load_checkpoint, restore_model, save_checkpoint
from .diffusion import NoiseSchedule, schedule_from_betas
from .encoder import Detection, DetectionHistory
from .errors import ConfigError, RangeError, ShapeError, TrainingError
from .model import TrackModel
from .sim.maps import MapSpec

MODES = ("single-target", "multi-target-known-origin", "multi-target-unknown-origin")


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 16
    epochs: int = 10
    learning_rate: float = 2e-4
    ema_decay: float | None = None
    seed: int = 0
    horizon: int = 60
    mode: str = "multi-target-unknown-origin"
    checkpoint_every: int = 0  # steps between checkpoints; 0 = final only

    def __post_init__(self):
        if self.batch_size < 1 or self.epochs < 1 or self.horizon < 1:
            raise ConfigError("batch_size, epochs, and horizon must be positive")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if self.ema_decay is not None and not (0.0 <= self.ema_decay < 1.0):
            raise ConfigError("ema_decay must lie in [0, 1)")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")

    @property
    def encoding_mode(self) -> str:
        return "per-agent" if self.mode == "multi-target-known-origin" else "shared"

    @property
    def labeled(self) -> bool:
        return self.mode == "multi-target-known-origin"


def make_training_example(
    episode,
    t_now: int,
    horizon: int,
    map_spec: MapSpec,
    max_episode_len: int,
    labeled: bool = False,
) -> tuple[DetectionHistory, np.ndarray]:
    """Past detections up to t_now plus the normalized future slate.

    The slate covers [t_now, t_now + horizon); detection ages are
    normalized by max_episode_len so dt stays in [0, 1].
    """
    if t_now < 0 or t_now + horizon > episode.episode_len:
        raise RangeError(
            f"window [{t_now}, {t_now + horizon}) exceeds episode length {episode.episode_len}"
        )
    dets = []
    for t, agent, x, y in episode.detections:
        if t > t_now:
            continue
        nx, ny = map_spec.normalize(np.array([x, y]))
        dets.append(Detection(
            dt=(t_now - t) / max_episode_len,
            x=float(nx),
            y=float(ny),
            agent_id=agent if labeled else None,
        ))
    history = DetectionHistory(dets)
    slate = map_spec.normalize(episode.trajectories[:, t_now : t_now + horizon])
    return history, slate


def _derived_seed(seed: int, *key: int) -> int:
    return int(np.random.SeedSequence(entropy=seed, spawn_key=key).generate_state(1, np.uint64)[0])


class Trainer:
    def __init__(
        self,
        model: TrackModel,
        schedule: NoiseSchedule,
        config: TrainConfig,
        log_path: str | Path | None = None,
        run_meta: dict | None = None,
    ):
        if config.horizon != model.config.horizon:
            raise ConfigError(
                f"TrainConfig.horizon {config.horizon} != model horizon {model.config.horizon}"
            )
        self.model = model
        self.schedule = schedule
        self.config = config
        self.run_meta = dict(run_meta or {})
        self.opt = torch.optim.Adam(model.parameters(), lr=config.learning_rate)
        self.global_step = 0
        self.epoch = 0
        self.log_path = Path(log_path) if log_path else None
        self.ema: dict[str, torch.Tensor] | None = None
        if config.ema_decay is not None:
            self.ema = {k: v.detach().clone() for k, v in model.state_dict().items()}

    # -- stateless randomness -------------------------------------------

    def _noise_for_step(self, step_index: int, batch_shape) -> tuple[torch.Tensor, torch.Tensor]:
        gen = torch.Generator().manual_seed(_derived_seed(self.config.seed, 1, step_index))
        steps = torch.randint(1, self.schedule.num_steps + 1, (batch_shape[0],), generator=gen)
        eps = torch.randn(*batch_shape, generator=gen)
        return steps, eps

    def _epoch_rng(self, epoch: int) -> np.random.Generator:
        return np.random.default_rng(_derived_seed(self.config.seed, 2, epoch))

    # -- loss ------------------------------------------------------------

    def compute_loss(
        self,
        slates: torch.Tensor,
        histories: list[DetectionHistory],
        steps: torch.Tensor,
        eps: torch.Tensor,
    ) -> torch.Tensor:
        """Noise-regression MSE; pure given the drawn (steps, eps)."""
        if slates.shape != eps.shape:
            raise ShapeError(f"slates {tuple(slates.shape)} vs eps {tuple(eps.shape)}")
        b, a = slates.shape[0], slates.shape[1]
        abar = torch.tensor(
            [self.schedule.alpha_bar(int(i)) for i in steps], dtype=slates.dtype
        ).view(b, 1, 1, 1)
        noisy = torch.sqrt(abar) * slates + torch.sqrt(1.0 - abar) * eps

        embs = [
            self.model.encoder.encode(h, self.config.encoding_mode, n_agents=a).embedding
            for h in histories
        ]
        cond = torch.stack(embs)  # (B, A, D) per-agent or (B, D) shared
        eps_hat = self.model.denoiser(noisy, steps, cond)
        return ((eps_hat - eps) ** 2).mean()

    # -- steps and epochs --------------------------------------------------

    def train_step(self, batch: list[tuple[DetectionHistory, np.ndarray]]) -> float:
        if not batch:
            raise TrainingError("empty batch")
        histories = [h for h, _ in batch]
        slates = torch.tensor(np.stack([s for _, s in batch]), dtype=torch.float32)
        steps, eps = self._noise_for_step(self.global_step, slates.shape)

        self.model.train()
        loss = self.compute_loss(slates, histories, steps, eps)
        if not torch.isfinite(loss):
            raise TrainingError(
                f"non-finite loss at step {self.global_step}: batch={len(batch)}, "
                f"diffusion steps {steps.min().item()}..{steps.max().item()}, "
                f"slate range [{slates.min().item():.3f}, {slates.max().item():.3f}]"
            )
        self.opt.zero_grad()
        loss.backward()
        self.opt.step()
        if self.ema is not None:
            d = self.config.ema_decay
            with torch.no_grad():
                for k, v in self.model.state_dict().items():
                    if v.dtype.is_floating_point:
                        self.ema[k].mul_(d).add_(v, alpha=1.0 - d)
                    else:
                        self.ema[k].copy_(v)
        self.global_step += 1
        value = float(loss.item())
        self._log({"step": self.global_step, "epoch": self.epoch, "loss": value, "wall_time": time.time()})
        return value

    def fit(
        self,
        episodes: list,
        map_spec: MapSpec,
        out_dir: str | Path | None = None,
        epochs: int | None = None,
    ) -> list[float]:
        """Run epochs [self.epoch, target); one example per episode per epoch."""
        target = self.config.epochs if epochs is None else epochs
        out_dir = Path(out_dir) if out_dir else None
        losses = []
        max_len = self.model.encoder.max_episode_len
        while self.epoch < target:
            rng = self._epoch_rng(self.epoch)
            order = rng.permutation(len(episodes))
            t_nows = {
                int(k): int(rng.integers(0, episodes[k].episode_len - self.config.horizon + 1))
                for k in order
            }
            for lo in range(0, len(order), self.config.batch_size):
                idxs = order[lo : lo + self.config.batch_size]
                batch = [
                    make_training_example(
                        episodes[k], t_nows[int(k)], self.config.horizon,
                        map_spec, max_len, labeled=self.config.labeled,
                    )
                    for k in idxs
                ]
                losses.append(self.train_step(batch))
                if (
                    out_dir
                    and self.config.checkpoint_every
                    and self.global_step % self.config.checkpoint_every == 0
                ):
                    self.save(out_dir / f"step{self.global_step:07d}.ckpt")
            self.epoch += 1
        if out_dir:
            self.save(out_dir / "final.ckpt")
        return losses

    # -- persistence -------------------------------------------------------

    def _optimizer_arrays(self) -> dict[str, np.ndarray]:
        arrays = {}
        names = [n for n, _ in self.model.named_parameters()]
        state = self.opt.state_dict()["state"]
        for i, name in enumerate(names):
            if i not in state:
                continue
            for key in ("exp_avg", "exp_avg_sq", "step"):
                arrays[f"opt.{name}.{key}"] = (
                    state[i][key].detach().cpu().numpy().astype("<f4", copy=False)
                )
        if self.ema is not None:
            for k, v in self.ema.items():
                arrays[f"ema.{k}"] = v.detach().cpu().numpy().astype("<f4", copy=False)
        return arrays

    def save(self, path: str | Path) -> None:
        meta = {
            **self.run_meta,
            "global_step": self.global_step,
            "epoch": self.epoch,
            "train_config": asdict(self.config),
            "schedule": {"num_steps": self.schedule.num_steps,
                         "betas": self.schedule.betas.tolist()},
        }
        save_checkpoint(path, self.model, meta=meta, extra_arrays=self._optimizer_arrays())

    @classmethod
    def resume(cls, path: str | Path, log_path: str | Path | None = None) -> "Trainer":
        bundle = load_checkpoint(path)
        model = restore_model(bundle)
        meta = bundle.meta
        config = TrainConfig(**meta["train_config"])
        schedule = schedule_from_betas(meta["schedule"]["betas"])
        core = {"global_step", "epoch", "train_config", "schedule"}
        run_meta = {k: v for k, v in meta.items() if k not in core}
        trainer = cls(model, schedule, config, log_path=log_path, run_meta=run_meta)
        trainer.global_step = meta["global_step"]
        trainer.epoch = meta["epoch"]
        trainer._restore_optimizer(bundle)
        return trainer

    def _restore_optimizer(self, bundle: CheckpointBundle) -> None:
        names = [n for n, _ in self.model.named_parameters()]
        state = {}
        for i, name in enumerate(names):
            key = f"opt.{name}.exp_avg"
            if key not in bundle.arrays:
                continue
            state[i] = {
                "exp_avg": torch.from_numpy(bundle.arrays[key]),
                "exp_avg_sq": torch.from_numpy(bundle.arrays[f"opt.{name}.exp_avg_sq"]),
                "step": torch.from_numpy(bundle.arrays[f"opt.{name}.step"]).reshape(()),
            }
        if state:
            sd = self.opt.state_dict()
            sd["state"] = state
            self.opt.load_state_dict(sd)
        if self.ema is not None:
            for k in self.ema:
                arr = bundle.arrays.get(f"ema.{k}")
                if arr is not None:
                    self.ema[k] = torch.from_numpy(arr.copy())

    def _log(self, record: dict) -> None:
        if self.log_path is None:
            return
        self.log_path.parent.mkdir(parents=True, exist_ok=True)
        with open(self.log_path, "a") as f:
            f.write(json.dumps(record) + "\n")
