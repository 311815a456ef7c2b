"""Encode sparse detection histories into fixed-width conditioning vectors.

Each detection is a (dt, x, y) triple: time since the detection
(normalized by max episode length) and its map position in [-1, 1]
coordinates. A recurrent pass over the sequence, oldest first, yields
the embedding; an empty history maps to a learned null token so "never
seen" is distinguishable from "seen at the map center".
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
from torch import nn

from .errors import ConfigError, DataError


@dataclass(frozen=True)
class Detection:
    dt: float
    x: float
    y: float
    agent_id: int | None = None

    def __post_init__(self):
        if self.dt < 0:
            raise DataError(f"dt must be nonnegative, got {self.dt}")
        if not (-1.0 <= self.x <= 1.0 and -1.0 <= self.y <= 1.0):
            raise DataError(f"detection position ({self.x}, {self.y}) outside normalized bounds")


@dataclass
class DetectionHistory:
    detections: list[Detection] = field(default_factory=list)

    def __post_init__(self):
        dts = [d.dt for d in self.detections]
        if any(a < b for a, b in zip(dts, dts[1:])):
            raise DataError("detections must be ordered oldest first (dt non-increasing)")

    def __len__(self):
        return len(self.detections)

    def for_agent(self, agent_id: int) -> "DetectionHistory":
        return DetectionHistory([d for d in self.detections if d.agent_id == agent_id])

    def as_tensor(self) -> torch.Tensor:
        if not self.detections:
            return torch.zeros(0, 3)
        return torch.tensor([[d.dt, d.x, d.y] for d in self.detections], dtype=torch.float32)


@dataclass
class ConditionVector:
    embedding: torch.Tensor  # (A, D) when per_agent else (D,)
    per_agent: bool


class HistoryEncoder(nn.Module):
    """LSTM over (dt, x, y) triples; final hidden state is the embedding.

    In per-agent mode each agent's own detections run through the same
    weights separately, giving one embedding per pathway; in shared mode
    the full interleaved stream yields a single embedding for all.
    """

    def __init__(self, cond_dim: int = 64, max_episode_len: int = 240):
        super().__init__()
        if cond_dim < 1 or max_episode_len < 1:
            raise ConfigError("cond_dim and max_episode_len must be positive")
        self.cond_dim = cond_dim
        self.max_episode_len = max_episode_len
        self.in_proj = nn.Linear(3, cond_dim)
        self.rnn = nn.LSTM(cond_dim, cond_dim, batch_first=True)
        self.null_token = nn.Parameter(torch.randn(cond_dim) * 0.02)

    def _encode_one(self, history: DetectionHistory) -> torch.Tensor:
        seq = history.as_tensor()
        if len(seq) == 0:
            return self.null_token
        seq = seq.to(self.in_proj.weight.dtype)
        _, (h_n, _) = self.rnn(self.in_proj(seq)[None])
        return h_n[-1, 0]

    def encode(self, history: DetectionHistory, mode: str, n_agents: int = 1) -> ConditionVector:
        if mode == "shared":
            return ConditionVector(self._encode_one(history), per_agent=False)
        if mode != "per-agent":
            raise ConfigError(f"mode must be 'shared' or 'per-agent', got {mode!r}")
        for i, d in enumerate(history.detections):
            if d.agent_id is None:
                raise DataError(f"per-agent encoding needs agent ids; detection {i} (dt={d.dt}) has none")
        rows = [self._encode_one(history.for_agent(a)) for a in range(n_agents)]
        return ConditionVector(torch.stack(rows), per_agent=True)

    def forward(self, history: DetectionHistory, mode: str = "shared", n_agents: int = 1) -> ConditionVector:
        return self.encode(history, mode, n_agents)
