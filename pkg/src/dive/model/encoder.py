"""Per-object input encoding with sequential object decomposition.

Object ``i`` runs a bidirectional LSTM over time whose step input is the
frame embedding concatenated with object ``i-1``'s hidden state at the same
step (zeros for the first object). The two directions are summed.
"""
from __future__ import annotations

import torch
from torch import nn

from ..config import ConfigError, ModelConfig


class FrameEmbedding(nn.Module):
    """Three stride-2 convolutions and a linear layer: (B, H, W) -> (B, D)."""

    def __init__(self, frame_size: int, channels=(16, 32, 64), out_dim: int = 128):
        super().__init__()
        layers, c_in = [], 1
        for c in channels:
            layers += [nn.Conv2d(c_in, c, 4, stride=2, padding=1), nn.ReLU()]
            c_in = c
        self.conv = nn.Sequential(*layers)
        side = frame_size // 2 ** len(channels)
        self.fc = nn.Sequential(nn.Linear(c_in * side * side, out_dim), nn.ReLU())

    def forward(self, frames: torch.Tensor) -> torch.Tensor:
        h = self.conv(frames.unsqueeze(1))
        return self.fc(h.flatten(1))


class SequenceEncoder(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.embed = FrameEmbedding(cfg.frame_size, cfg.conv_channels, cfg.frame_embed_dim)
        self.rnn = nn.LSTM(cfg.frame_embed_dim + cfg.hidden_y, cfg.hidden_y,
                           batch_first=True, bidirectional=True)

    def embed_frames(self, frames: torch.Tensor) -> torch.Tensor:
        B, K = frames.shape[:2]
        return self.embed(frames.reshape(B * K, *frames.shape[2:])).reshape(B, K, -1)

    def forward(self, frames: torch.Tensor, num_objects: int | None = None) -> torch.Tensor:
        """Frames ``(B, K, H, W)`` -> encoder states ``(B, N, K, hidden_y)``."""
        N = self.cfg.num_objects if num_objects is None else num_objects
        if not 1 <= N <= self.cfg.num_objects:
            raise ConfigError(f"num_objects={N} exceeds configured bound {self.cfg.num_objects}")
        e = self.embed_frames(frames)
        B, K = e.shape[:2]
        prev = e.new_zeros(B, K, self.cfg.hidden_y)
        states = []
        for _ in range(N):
            out, _ = self.rnn(torch.cat([e, prev], -1))
            fwd, bwd = out.chunk(2, -1)
            prev = fwd + bwd
            states.append(prev)
        return torch.stack(states, 1)
