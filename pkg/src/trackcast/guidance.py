"""Constraint-guided ancestral sampling with inpainting.

The chain runs in numpy, outside the network library: each step asks
the model for ε̂, forms the posterior mean, nudges that mean with a few
adaptive-optimizer updates that reduce a penalty J (motion smoothness +
obstacle clearance), draws the next iterate, and finally overwrites any
entries whose true values are known (detected current positions).

All coordinates here are in model space ([-1, 1] per axis).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .diffusion import NoiseSchedule, posterior_mean
from .errors import ConfigError, SamplingError, ShapeError

PredictFn = Callable[[np.ndarray, int], np.ndarray]


@dataclass
class ConstraintSet:
    motion_weight: float = 0.0
    obstacle_weight: float = 0.0
    obstacles: np.ndarray = field(default_factory=lambda: np.empty((0, 3)))  # cx, cy, r normalized
    margin: float = 0.02
    grad_steps: int = 2
    step_size: float = 1e-2

    def __post_init__(self):
        self.obstacles = np.asarray(self.obstacles, dtype=np.float64).reshape(-1, 3)
        if self.motion_weight < 0 or self.obstacle_weight < 0:
            raise ConfigError("constraint weights must be nonnegative")
        if self.grad_steps < 0:
            raise ConfigError("grad_steps must be nonnegative")
        if self.step_size <= 0:
            raise ConfigError("step_size must be positive")
        if self.margin < 0:
            raise ConfigError("margin must be nonnegative")
        if len(self.obstacles):
            if np.any(np.abs(self.obstacles[:, :2]) > 1.0):
                raise ConfigError("obstacle centers must lie within normalized map bounds")
            if np.any(self.obstacles[:, 2] < 0.0):
                raise ConfigError("obstacle radii must be nonnegative")

    @property
    def active(self) -> bool:
        return self.grad_steps > 0 and (self.motion_weight > 0 or self.obstacle_weight > 0)


@dataclass
class InpaintMask:
    entries: list[tuple[int, int, float, float]] = field(default_factory=list)  # agent, t, x, y

    def __post_init__(self):
        for agent, t, _, _ in self.entries:
            if agent < 0 or t < 0:
                raise ConfigError(f"mask entry ({agent}, {t}) has negative indices")

    def __len__(self):
        return len(self.entries)

    def check_bounds(self, n_agents: int, horizon: int) -> None:
        for agent, t, _, _ in self.entries:
            if agent >= n_agents or t >= horizon:
                raise ConfigError(
                    f"mask entry (agent {agent}, t {t}) outside slate ({n_agents} x {horizon})"
                )

    def apply(self, slate: np.ndarray) -> None:
        for agent, t, x, y in self.entries:
            slate[agent, t, 0] = x
            slate[agent, t, 1] = y


def motion_objective(slate: np.ndarray) -> tuple[float, np.ndarray]:
    """Sum of consecutive-state distances and its analytic (sub)gradient."""
    slate = np.asarray(slate, dtype=np.float64)
    if slate.ndim != 3 or slate.shape[1] < 2:
        raise ShapeError(f"slate must be (A, H>=2, 2), got {slate.shape}")
    diffs = slate[:, 1:] - slate[:, :-1]  # (A, H-1, 2)
    norms = np.linalg.norm(diffs, axis=-1)  # (A, H-1)
    value = float(norms.sum())
    # unit directions; zero-length segments contribute the zero subgradient
    safe = np.where(norms > 0.0, norms, 1.0)[..., None]
    units = np.where(norms[..., None] > 0.0, diffs / safe, 0.0)
    grad = np.zeros_like(slate)
    grad[:, 1:] += units
    grad[:, :-1] -= units
    return value, grad


def obstacle_objective(slate: np.ndarray, constraints: ConstraintSet) -> tuple[float, np.ndarray]:
    """Hinge penalty max(0, (r + margin) − ‖τ − c‖) summed over states × obstacles.

    The descent direction of the gradient pushes violating states
    radially outward; a state exactly at a center gets the fixed
    direction (1, 0) so behavior stays deterministic.
    """
    slate = np.asarray(slate, dtype=np.float64)
    value = 0.0
    grad = np.zeros_like(slate)
    for cx, cy, r in constraints.obstacles:
        delta = slate - np.array([cx, cy])  # (A, H, 2)
        dist = np.linalg.norm(delta, axis=-1)  # (A, H)
        viol = (r + constraints.margin) - dist
        active = viol > 0.0
        if not active.any():
            continue
        value += float(viol[active].sum())
        safe = np.where(dist > 0.0, dist, 1.0)[..., None]
        direction = np.where(dist[..., None] > 0.0, delta / safe, np.array([1.0, 0.0]))
        grad -= np.where(active[..., None], direction, 0.0)
    return value, grad


def combined_objective(slate: np.ndarray, constraints: ConstraintSet) -> tuple[float, np.ndarray]:
    value = 0.0
    grad = np.zeros_like(slate, dtype=np.float64)
    if constraints.motion_weight > 0:
        v, g = motion_objective(slate)
        value += constraints.motion_weight * v
        grad += constraints.motion_weight * g
    if constraints.obstacle_weight > 0:
        v, g = obstacle_objective(slate, constraints)
        value += constraints.obstacle_weight * v
        grad += constraints.obstacle_weight * g
    return value, grad


class _Adam:
    """Minimal adaptive-moment optimizer; fresh state per diffusion step."""

    def __init__(self, shape, lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = np.zeros(shape)
        self.v = np.zeros(shape)
        self.t = 0

    def delta(self, grad: np.ndarray) -> np.ndarray:
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grad * grad
        m_hat = self.m / (1.0 - self.beta1**self.t)
        v_hat = self.v / (1.0 - self.beta2**self.t)
        return self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def _refine_mean(mu: np.ndarray, constraints: ConstraintSet) -> np.ndarray:
    opt = _Adam(mu.shape, constraints.step_size)
    for _ in range(constraints.grad_steps):
        _, grad = combined_objective(mu, constraints)
        mu = mu - opt.delta(grad)
    return mu


def guided_sample(
    predict_fn: PredictFn,
    schedule: NoiseSchedule,
    shape: tuple[int, int, int],
    constraints: ConstraintSet,
    mask: InpaintMask,
    rng: np.random.Generator,
) -> np.ndarray:
    """One full reverse chain; returns a (A, H, 2) slate in model space.

    With guidance disabled (grad_steps 0 or zero weights) and an empty
    mask, the output is byte-identical to plain ancestral sampling on
    the same rng stream: the code path and rng consumption are the same.
    """
    a, h, c = shape
    if c != 2:
        raise ShapeError(f"slate shape must end in 2, got {shape}")
    mask.check_bounds(a, h)

    slate = rng.standard_normal(shape)
    for i in range(schedule.num_steps, 0, -1):
        eps_hat = predict_fn(slate, i)
        if eps_hat.shape != slate.shape:
            raise ShapeError(f"model returned {eps_hat.shape}, expected {slate.shape}")
        if not np.isfinite(eps_hat).all():
            raise SamplingError("model produced non-finite noise prediction", step=i)
        mu = posterior_mean(slate, i, eps_hat, schedule)
        if constraints.active:
            mu = _refine_mean(mu, constraints)
        z = rng.standard_normal(shape)
        sigma = schedule.sigma(i)
        slate = mu + sigma * z if sigma != 0.0 else mu
        mask.apply(slate)
        if not np.isfinite(slate).all():
            raise SamplingError("chain diverged to non-finite values", step=i)
    return slate


def monte_carlo_sample(
    predict_fn: PredictFn,
    schedule: NoiseSchedule,
    shape: tuple[int, int, int],
    constraints: ConstraintSet,
    mask: InpaintMask,
    n_samples: int,
    rng: np.random.Generator,
) -> list[np.ndarray]:
    """n independent chains on independent substreams of `rng`."""
    if n_samples < 1:
        raise ConfigError(f"n_samples must be >= 1, got {n_samples}")
    return [
        guided_sample(predict_fn, schedule, shape, constraints, mask, child)
        for child in rng.spawn(n_samples)
    ]
