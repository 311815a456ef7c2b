"""Full model: detection encoder + denoiser, and a numpy-facing
prediction adapter for the sampling loop (which runs outside torch).
"""

from __future__ import annotations

from typing import Callable

import numpy as np
import torch
from torch import nn

from .encoder import DetectionHistory, HistoryEncoder
from .nets import Denoiser, DenoiserConfig


class TrackModel(nn.Module):
    def __init__(self, config: DenoiserConfig, max_episode_len: int = 240):
        super().__init__()
        self.config = config
        self.denoiser = Denoiser(config)
        self.encoder = HistoryEncoder(config.cond_dim, max_episode_len)

    def forward(
        self,
        slate: torch.Tensor,
        step: torch.Tensor,
        history: DetectionHistory,
        mode: str = "shared",
    ) -> torch.Tensor:
        b, a = slate.shape[0], slate.shape[1]
        cond = self.encoder.encode(history, mode, n_agents=a)
        emb = cond.embedding
        if cond.per_agent:
            emb = emb[None].expand(b, a, -1)
        else:
            emb = emb[None].expand(b, -1)
        return self.denoiser(slate, step, emb)

    def predictor(
        self,
        history: DetectionHistory,
        mode: str = "shared",
        n_agents: int = 1,
    ) -> Callable[[np.ndarray, int], np.ndarray]:
        """Bind the conditioning once; return slate, step -> ε̂ on numpy arrays.

        The sampling loop calls this hundreds of times per trajectory, so
        the history is encoded a single time up front.
        """
        self.eval()
        with torch.no_grad():
            cond = self.encoder.encode(history, mode, n_agents=n_agents)
            emb = cond.embedding.detach()
        if cond.per_agent:
            emb_b = emb[None]  # (1, A, D)
        else:
            emb_b = emb[None]  # (1, D)

        def predict(slate: np.ndarray, step: int) -> np.ndarray:
            x = torch.from_numpy(np.ascontiguousarray(slate, dtype=np.float32))[None]
            s = torch.tensor([step], dtype=torch.long)
            with torch.no_grad():
                eps = self.denoiser(x, s, emb_b)
            return eps[0].numpy().astype(np.float64)

        return predict
