"""Core DDPM mechanics, independent of any network.

Implements the forward noising process, the noise-regression training
loss, and the single ancestral denoising step:

    forward:  q(tau^i | tau^0) = N(sqrt(abar_i) tau^0, (1 - abar_i) I)
    reverse:  tau^{i-1} = (1/sqrt(alpha_i)) (tau^i - (1-alpha_i)/sqrt(1-abar_i) eps_hat)
                          + sigma_i z

Diffusion steps are 1-based: step i in [1, T] reads table row i-1, and
step 1 is the final, deterministic denoising step (sigma_1 = 0).

All functions accept numpy arrays or torch tensors; schedule
coefficients enter as Python floats so the array library of the input
is preserved (including autograd tracking for tensors).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, RangeError, ShapeError

SCHEDULE_KINDS = ("linear", "cosine")

# DDPM convention: beta bounds tuned for 1000 steps, rescaled for other T.
BETA_MIN_REF = 1e-4
BETA_MAX_REF = 0.02
REFERENCE_STEPS = 1000


@dataclass(frozen=True)
class NoiseSchedule:
    """Precomputed per-step noise tables, indexed by step-1."""

    num_steps: int
    betas: np.ndarray
    alphas: np.ndarray
    alpha_bars: np.ndarray
    sigmas: np.ndarray

    def __post_init__(self):
        T = self.num_steps
        if T < 1:
            raise ConfigError(f"num_steps must be >= 1, got {T}")
        for name in ("betas", "alphas", "alpha_bars", "sigmas"):
            arr = getattr(self, name)
            if arr.shape != (T,):
                raise ShapeError(f"{name} must have shape ({T},), got {arr.shape}")
        if not np.all((self.betas > 0.0) & (self.betas < 1.0)):
            raise ConfigError("betas must lie strictly in (0, 1)")
        if not np.array_equal(self.alphas, 1.0 - self.betas):
            raise ConfigError("alphas must equal 1 - betas exactly")
        if T > 1 and not np.all(np.diff(self.alpha_bars) < 0.0):
            raise ConfigError("alpha_bars must be strictly decreasing")
        if not np.all((self.alpha_bars > 0.0) & (self.alpha_bars <= 1.0)):
            raise ConfigError("alpha_bars must lie in (0, 1]")
        if self.sigmas[0] != 0.0:
            raise ConfigError("sigma_1 must be 0 (deterministic final step)")
        if np.any(self.sigmas < 0.0):
            raise ConfigError("sigmas must be nonnegative")

    def beta(self, step: int) -> float:
        return float(self.betas[_check_step(step, self.num_steps) - 1])

    def alpha(self, step: int) -> float:
        return float(self.alphas[_check_step(step, self.num_steps) - 1])

    def alpha_bar(self, step: int) -> float:
        return float(self.alpha_bars[_check_step(step, self.num_steps) - 1])

    def sigma(self, step: int) -> float:
        return float(self.sigmas[_check_step(step, self.num_steps) - 1])


@dataclass
class DiffusionState:
    """A slate mid-denoising together with its current step index."""

    slate: object
    step: int = field(default=0)


def _check_step(step: int, num_steps: int) -> int:
    if not 1 <= step <= num_steps:
        raise RangeError(f"step must be in [1, {num_steps}], got {step}")
    return step


def build_schedule(
    num_steps: int,
    kind: str = "linear",
    beta_min: float = BETA_MIN_REF,
    beta_max: float = BETA_MAX_REF,
) -> NoiseSchedule:
    """Construct the beta/alpha/alpha-bar/sigma tables for T steps.

    ``linear`` interpolates beta from beta_min to beta_max across the T
    steps. ``cosine`` derives betas from the squared-cosine alpha-bar
    curve (betas clipped to beta_max at most 0.999); the bounds are
    validated but only the clip ceiling uses them.
    """
    if num_steps < 1:
        raise ConfigError(f"num_steps must be >= 1, got {num_steps}")
    if not 0.0 < beta_min <= beta_max < 1.0:
        raise ConfigError(
            f"need 0 < beta_min <= beta_max < 1, got beta_min={beta_min}, beta_max={beta_max}"
        )
    if kind == "linear":
        betas = np.linspace(beta_min, beta_max, num_steps, dtype=np.float64)
    elif kind == "cosine":
        s = 0.008
        grid = np.arange(num_steps + 1, dtype=np.float64) / num_steps
        f = np.cos((grid + s) / (1.0 + s) * math.pi / 2.0) ** 2
        abar = f / f[0]
        betas = np.clip(1.0 - abar[1:] / abar[:-1], 1e-8, 0.999)
    else:
        raise ConfigError(f"unknown schedule kind {kind!r}; expected one of {SCHEDULE_KINDS}")
    return schedule_from_betas(betas)


def schedule_from_betas(betas) -> NoiseSchedule:
    """Derive the alpha/alpha-bar/sigma tables from a raw beta sequence."""
    betas = np.asarray(betas, dtype=np.float64)
    alphas = 1.0 - betas
    alpha_bars = np.cumprod(alphas)
    sigmas = np.sqrt(betas)
    sigmas[0] = 0.0
    return NoiseSchedule(
        num_steps=len(betas),
        betas=betas,
        alphas=alphas,
        alpha_bars=alpha_bars,
        sigmas=sigmas,
    )


def default_beta_bounds(num_steps: int) -> tuple[float, float]:
    """Beta bounds rescaled so total noise matches the 1000-step convention."""
    scale = REFERENCE_STEPS / num_steps
    return min(0.5, scale * BETA_MIN_REF), min(0.999, scale * BETA_MAX_REF)


def default_schedule(num_steps: int = 100) -> NoiseSchedule:
    lo, hi = default_beta_bounds(num_steps)
    return build_schedule(num_steps, "linear", lo, hi)


def _require_same_shape(a, b, what: str):
    if tuple(a.shape) != tuple(b.shape):
        raise ShapeError(f"{what}: shape {tuple(a.shape)} != {tuple(b.shape)}")


def forward_noise(tau0, step: int, eps, schedule: NoiseSchedule):
    """Noise a clean slate to diffusion step i in closed form.

    Returns sqrt(abar_i) * tau0 + sqrt(1 - abar_i) * eps.
    """
    _require_same_shape(tau0, eps, "forward_noise")
    abar = schedule.alpha_bar(step)
    return math.sqrt(abar) * tau0 + math.sqrt(1.0 - abar) * eps


def posterior_mean(slate, step: int, eps_hat, schedule: NoiseSchedule):
    """Mean of the reverse-step Gaussian given the predicted noise."""
    _require_same_shape(slate, eps_hat, "posterior_mean")
    alpha = schedule.alpha(step)
    abar = schedule.alpha_bar(step)
    coef = (1.0 - alpha) / math.sqrt(1.0 - abar)
    return (slate - coef * eps_hat) / math.sqrt(alpha)


def denoise_step(state: DiffusionState, eps_hat, schedule: NoiseSchedule, z) -> DiffusionState:
    """One ancestral sampling step; decrements the step counter.

    z is the externally supplied standard-normal draw; at step 1 it is
    multiplied by sigma_1 = 0, making the final step deterministic.
    """
    if state.step == 0:
        raise RangeError("step is 0: nothing left to denoise")
    mean = posterior_mean(state.slate, state.step, eps_hat, schedule)
    sigma = schedule.sigma(state.step)
    slate = mean + sigma * z if sigma != 0.0 else mean
    return DiffusionState(slate=slate, step=state.step - 1)


def training_loss(eps_true, eps_pred):
    """Mean squared error between true and predicted noise slates."""
    _require_same_shape(eps_true, eps_pred, "training_loss")
    diff = eps_true - eps_pred
    return (diff * diff).mean()
