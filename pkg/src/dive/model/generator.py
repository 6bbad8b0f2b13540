"""Glimpse decoder and frame composition."""
from __future__ import annotations

import torch
from torch import nn

from ..spatial import place


class GlimpseDecoder(nn.Module):
    """z_a -> G x G glimpse in [0, 1] via two transposed convolutions."""

    def __init__(self, z_dim: int, glimpse_size: int, channels=(32, 16)):
        super().__init__()
        if glimpse_size % 4:
            raise ValueError("glimpse_size must be divisible by 4")
        self.side = glimpse_size // 4
        self.c0 = channels[0]
        self.fc = nn.Sequential(nn.Linear(z_dim, channels[0] * self.side ** 2), nn.ReLU())
        self.deconv = nn.Sequential(
            nn.ConvTranspose2d(channels[0], channels[1], 4, 2, 1), nn.ReLU(),
            nn.ConvTranspose2d(channels[1], 1, 4, 2, 1),
        )

    def logits(self, z: torch.Tensor) -> torch.Tensor:
        lead = z.shape[:-1]
        h = self.fc(z.reshape(-1, z.shape[-1])).reshape(-1, self.c0, self.side, self.side)
        out = self.deconv(h)
        return out.reshape(*lead, *out.shape[-2:])

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(self.logits(z))


def decode_glimpse(decoder: GlimpseDecoder, z_a: torch.Tensor) -> torch.Tensor:
    return decoder(z_a)


def compose(contributions: torch.Tensor, dim: int = 1) -> torch.Tensor:
    """Sum object contributions and clamp to [0, 1]."""
    return contributions.sum(dim).clamp(0.0, 1.0)


def render_objects(glimpses: torch.Tensor, poses: torch.Tensor, frame_size: int,
                   gates: torch.Tensor | None = None, scale_bounds=(0.15, 1.0)) -> torch.Tensor:
    """Per-object contributions ``place(glimpse, pose) * gate``; gate shape = poses.shape[:-1]."""
    placed = place(glimpses, poses, frame_size, scale_bounds=scale_bounds)
    if gates is not None:
        placed = placed * gates[..., None, None]
    return placed


def render_reconstruction(glimpses, poses, gates, frame_size: int, scale_bounds=(0.15, 1.0)):
    """Input-regime frame ``(B, H, W)`` from per-object ``(B, N, ...)`` latents.

    ``gates`` is ``1 - z_m`` (hard) at evaluation or the soft gate in training.
    """
    contrib = render_objects(glimpses, poses, frame_size, gates, scale_bounds)
    return compose(contrib), contrib


def render_prediction(glimpses, poses, frame_size: int, scale_bounds=(0.15, 1.0)):
    """Prediction-regime frame: like reconstruction but never gated."""
    contrib = render_objects(glimpses, poses, frame_size, None, scale_bounds)
    return compose(contrib), contrib
