"""Noise-prediction network: per-agent temporal U-nets with shared
weights, FiLM conditioning, and cross-agent attention.

Every agent's trajectory runs through the same 1-D convolutional U-net
(so the model is defined for any number of agents); attention blocks
after each down- and up-level are the only place information crosses
agent pathways. A trajectory slate is laid out (batch, agents, horizon,
2) at the interface and (batch * agents, channels, time) inside the
convolutions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import nn

from .errors import ConfigError, NumericError, ShapeError


@dataclass(frozen=True)
class DenoiserConfig:
    base_channels: int = 32
    depth: int = 2
    attention_heads: int = 4
    head_dim: int = 16
    cond_dim: int = 64
    horizon: int = 60

    def __post_init__(self):
        for name in ("base_channels", "depth", "attention_heads", "head_dim", "cond_dim", "horizon"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be a positive integer")
        if self.horizon % (1 << self.depth) != 0:
            raise ConfigError(
                f"horizon {self.horizon} not divisible by 2^depth = {1 << self.depth}; "
                "temporal down/upsampling would not round-trip"
            )
        if self.cond_dim % 2 != 0:
            raise ConfigError("cond_dim must be even (sin/cos halves of the step embedding)")

    @property
    def attention_width(self) -> int:
        return self.attention_heads * self.head_dim


def sinusoidal_embedding(steps: torch.Tensor, dim: int) -> torch.Tensor:
    """Classic transformer position code for the diffusion step index."""
    if dim % 2 != 0:
        raise ConfigError("embedding dim must be even")
    half = dim // 2
    freqs = torch.exp(-math.log(10_000.0) * torch.arange(half, dtype=torch.float32) / half)
    angles = steps.float()[:, None] * freqs[None, :].to(steps.device)
    return torch.cat([torch.sin(angles), torch.cos(angles)], dim=-1)


def cross_attend(q: torch.Tensor, k: torch.Tensor, v: torch.Tensor) -> torch.Tensor:
    """Scaled dot-product attention across agent pathways.

    q, k, v: (..., A, T, D). For each destination agent m the output is
    the sum over source agents n of softmax(q_m k_nᵀ / √D) v_n — the
    softmax runs per (m, n) pair over source timesteps, so with A = 1
    this is exactly ordinary self-attention.
    """
    if q.shape != k.shape or q.shape != v.shape:
        raise ShapeError(f"q/k/v shapes differ: {tuple(q.shape)}, {tuple(k.shape)}, {tuple(v.shape)}")
    scale = 1.0 / math.sqrt(q.shape[-1])
    logits = torch.einsum("...mtd,...nsd->...mnts", q, k) * scale
    weights = torch.softmax(logits, dim=-1)
    return torch.einsum("...mnts,...nsd->...mtd", weights, v)


class FiLM(nn.Module):
    """Per-channel affine modulation from a conditioning vector.

    Initialized to the identity (scale 1, shift 0) so an untrained
    network ignores the conditioning rather than scrambling features.
    """

    def __init__(self, cond_dim: int, channels: int):
        super().__init__()
        self.proj = nn.Linear(cond_dim, 2 * channels)
        nn.init.zeros_(self.proj.weight)
        with torch.no_grad():
            self.proj.bias.copy_(torch.cat([torch.ones(channels), torch.zeros(channels)]))

    def forward(self, x: torch.Tensor, cond: torch.Tensor) -> torch.Tensor:
        if cond.shape[-1] != self.proj.in_features:
            raise ShapeError(f"cond width {cond.shape[-1]} != expected {self.proj.in_features}")
        scale, shift = self.proj(cond).chunk(2, dim=-1)
        return x * scale[..., None] + shift[..., None]


def _groups(channels: int) -> int:
    return math.gcd(8, channels)


class ResBlock(nn.Module):
    def __init__(self, in_ch: int, out_ch: int, cond_dim: int, kernel: int = 5):
        super().__init__()
        self.conv1 = nn.Conv1d(in_ch, out_ch, kernel, padding=kernel // 2)
        self.norm1 = nn.GroupNorm(_groups(out_ch), out_ch)
        self.film = FiLM(cond_dim, out_ch)
        self.conv2 = nn.Conv1d(out_ch, out_ch, kernel, padding=kernel // 2)
        self.norm2 = nn.GroupNorm(_groups(out_ch), out_ch)
        self.act = nn.Mish()
        self.skip = nn.Conv1d(in_ch, out_ch, 1) if in_ch != out_ch else nn.Identity()

    def forward(self, x: torch.Tensor, cond: torch.Tensor) -> torch.Tensor:
        h = self.act(self.norm1(self.conv1(x)))
        h = self.film(h, cond)
        h = self.act(self.norm2(self.conv2(h)))
        return h + self.skip(x)


class CrossAgentAttention(nn.Module):
    """Multi-head cross_attend over pathways, residual, zero-init output."""

    def __init__(self, channels: int, heads: int, head_dim: int):
        super().__init__()
        inner = heads * head_dim
        self.heads = heads
        self.head_dim = head_dim
        self.norm = nn.GroupNorm(_groups(channels), channels)
        self.to_qkv = nn.Conv1d(channels, 3 * inner, 1, bias=False)
        self.to_out = nn.Conv1d(inner, channels, 1)
        nn.init.zeros_(self.to_out.weight)
        nn.init.zeros_(self.to_out.bias)

    def forward(self, x: torch.Tensor, n_agents: int) -> torch.Tensor:
        # x: (B * A, C, T)
        ba, _, t = x.shape
        b = ba // n_agents
        qkv = self.to_qkv(self.norm(x))  # (B*A, 3*inner, T)
        qkv = qkv.reshape(b, n_agents, 3, self.heads, self.head_dim, t)
        q, k, v = (qkv[:, :, i].permute(0, 2, 1, 4, 3) for i in range(3))  # (B, H, A, T, D)

        out = cross_attend(q, k, v)  # (B, H, A, T, D)
        out = out.permute(0, 2, 1, 4, 3).reshape(ba, self.heads * self.head_dim, t)
        return x + self.to_out(out)


class Downsample(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.conv = nn.Conv1d(channels, channels, 3, stride=2, padding=1)

    def forward(self, x):
        return self.conv(x)


class Upsample(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.conv = nn.Conv1d(channels, channels, 3, padding=1)

    def forward(self, x):
        return self.conv(nn.functional.interpolate(x, scale_factor=2.0, mode="nearest"))


class Denoiser(nn.Module):
    """ε_θ(τ^i, i, condition) over a multi-agent trajectory slate."""

    def __init__(self, config: DenoiserConfig):
        super().__init__()
        self.config = config
        c0 = config.base_channels
        widths = [c0 * (1 << lvl) for lvl in range(config.depth + 1)]

        self.step_mlp = nn.Sequential(
            nn.Linear(config.cond_dim, config.cond_dim), nn.Mish(),
            nn.Linear(config.cond_dim, config.cond_dim),
        )
        self.in_proj = nn.Conv1d(2, c0, 1)

        self.down_blocks = nn.ModuleList()
        for lvl in range(config.depth):
            self.down_blocks.append(nn.ModuleDict({
                "res1": ResBlock(widths[lvl], widths[lvl + 1], config.cond_dim),
                "res2": ResBlock(widths[lvl + 1], widths[lvl + 1], config.cond_dim),
                "attn": CrossAgentAttention(widths[lvl + 1], config.attention_heads, config.head_dim),
                "down": Downsample(widths[lvl + 1]),
            }))

        mid = widths[-1]
        self.mid1 = ResBlock(mid, mid, config.cond_dim)
        self.mid2 = ResBlock(mid, mid, config.cond_dim)

        self.up_blocks = nn.ModuleList()
        for lvl in reversed(range(config.depth)):
            self.up_blocks.append(nn.ModuleDict({
                "up": Upsample(widths[lvl + 1]),
                "res1": ResBlock(widths[lvl + 1] * 2, widths[lvl + 1], config.cond_dim),
                "res2": ResBlock(widths[lvl + 1], widths[lvl], config.cond_dim),
                "attn": CrossAgentAttention(widths[lvl], config.attention_heads, config.head_dim),
            }))

        self.out_norm = nn.GroupNorm(_groups(c0), c0)
        self.out_act = nn.Mish()
        self.out_proj = nn.Conv1d(c0, 2, 1)
        nn.init.zeros_(self.out_proj.weight)  # ε̂ = 0 at init
        nn.init.zeros_(self.out_proj.bias)

    def forward(self, slate: torch.Tensor, step: torch.Tensor, cond: torch.Tensor) -> torch.Tensor:
        """slate (B, A, H, 2); step (B,) int; cond (B, A, cond_dim) or (B, cond_dim)."""
        if slate.ndim != 4 or slate.shape[-1] != 2:
            raise ShapeError(f"slate must be (B, A, H, 2), got {tuple(slate.shape)}")
        b, a, h, _ = slate.shape
        if h != self.config.horizon:
            raise ShapeError(f"slate horizon {h} != configured {self.config.horizon}")
        if not torch.isfinite(slate).all():
            raise NumericError("non-finite values in slate")

        if cond.ndim == 2:  # shared embedding: broadcast to every pathway
            cond = cond[:, None, :].expand(b, a, cond.shape[-1])
        if cond.shape != (b, a, self.config.cond_dim):
            raise ShapeError(f"cond must be (B, A, {self.config.cond_dim}), got {tuple(cond.shape)}")

        step_emb = self.step_mlp(
            sinusoidal_embedding(step.reshape(b), self.config.cond_dim).to(slate.dtype)
        )
        c = (cond + step_emb[:, None, :]).reshape(b * a, -1)

        x = self.in_proj(slate.reshape(b * a, h, 2).transpose(1, 2))  # (B*A, C, H)
        skips = []
        for blk in self.down_blocks:
            x = blk["res2"](blk["res1"](x, c), c)
            x = blk["attn"](x, a)
            skips.append(x)
            x = blk["down"](x)

        x = self.mid2(self.mid1(x, c), c)

        for blk in self.up_blocks:
            x = blk["up"](x)
            x = torch.cat([x, skips.pop()], dim=1)
            x = blk["res2"](blk["res1"](x, c), c)
            x = blk["attn"](x, a)

        x = self.out_proj(self.out_act(self.out_norm(x)))  # (B*A, 2, H)
        return x.transpose(1, 2).reshape(b, a, h, 2)
