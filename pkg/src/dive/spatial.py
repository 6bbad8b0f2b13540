"""Differentiable affine spatial transformer between frames and glimpses.

A pose is ``(tx, ty, scale)`` in normalized coordinates ([-1, 1] spans the
frame, x horizontal). Glimpse coordinate ``q`` maps to frame coordinate
``scale * q + t``, so ``scale`` is the ratio of glimpse extent to frame extent.
Sampling is bilinear with zero padding and ``align_corners=False``.
"""
from __future__ import annotations

import torch
import torch.nn.functional as F

SCALE_MIN = 0.15
SCALE_MAX = 1.0


class PoseClampCounter:
    """Counts how often poses had to be clamped into bounds."""

    def __init__(self):
        self.count = 0

    def reset(self):
        self.count = 0


clamp_counter = PoseClampCounter()


def clamp_pose(pose: torch.Tensor, scale_min: float = SCALE_MIN, scale_max: float = SCALE_MAX) -> torch.Tensor:
    lo = pose.new_tensor([-1.0, -1.0, scale_min])
    hi = pose.new_tensor([1.0, 1.0, scale_max])
    outside = (pose < lo) | (pose > hi)
    n = int(outside.any(-1).sum())
    if n:
        clamp_counter.count += n
        pose = torch.maximum(torch.minimum(pose, hi), lo)
    return pose


def squash_pose(raw: torch.Tensor, scale_min: float = SCALE_MIN, scale_max: float = SCALE_MAX) -> torch.Tensor:
    """Unconstrained raw pose -> bounded pose (tanh offsets, logistic scale)."""
    txy = torch.tanh(raw[..., :2])
    s = scale_min + (scale_max - scale_min) * torch.sigmoid(raw[..., 2:3])
    return torch.cat([txy, s], -1)


def unsquash_pose(pose: torch.Tensor, scale_min: float = SCALE_MIN, scale_max: float = SCALE_MAX) -> torch.Tensor:
    txy = torch.atanh(pose[..., :2].clamp(-1 + 1e-6, 1 - 1e-6))
    u = ((pose[..., 2:3] - scale_min) / (scale_max - scale_min)).clamp(1e-6, 1 - 1e-6)
    return torch.cat([txy, torch.logit(u)], -1)


def _extract_theta(pose: torch.Tensor) -> torch.Tensor:
    tx, ty, s = pose.unbind(-1)
    zero = torch.zeros_like(s)
    return torch.stack([torch.stack([s, zero, tx], -1), torch.stack([zero, s, ty], -1)], -2)


def _place_theta(pose: torch.Tensor) -> torch.Tensor:
    tx, ty, s = pose.unbind(-1)
    inv = 1.0 / s
    zero = torch.zeros_like(s)
    return torch.stack([torch.stack([inv, zero, -tx * inv], -1), torch.stack([zero, inv, -ty * inv], -1)], -2)


def _as_batch(img: torch.Tensor):
    lead = img.shape[:-2]
    return img.reshape(-1, 1, *img.shape[-2:]), lead


def place(glimpse: torch.Tensor, pose: torch.Tensor, frame_size: int, clamp: bool = True,
          scale_bounds: tuple[float, float] = (SCALE_MIN, SCALE_MAX)) -> torch.Tensor:
    """Resample glimpses ``(..., G, G)`` into zero frames ``(..., S, S)`` at ``pose (..., 3)``.

    Out-of-bounds poses are clamped (and counted in ``clamp_counter``).
    """
    if clamp:
        pose = clamp_pose(pose, *scale_bounds)
    g, lead = _as_batch(glimpse)
    theta = _place_theta(pose.reshape(-1, 3)).to(g.dtype)
    grid = F.affine_grid(theta, [g.shape[0], 1, frame_size, frame_size], align_corners=False)
    out = F.grid_sample(g, grid, mode="bilinear", padding_mode="zeros", align_corners=False)
    return out.reshape(*lead, frame_size, frame_size)


def extract(frame: torch.Tensor, pose: torch.Tensor, glimpse_size: int, clamp: bool = True,
            scale_bounds: tuple[float, float] = (SCALE_MIN, SCALE_MAX)) -> torch.Tensor:
    """Inverse of :func:`place`: rectified ``(..., G, G)`` crops of ``(..., S, S)`` frames."""
    if clamp:
        pose = clamp_pose(pose, *scale_bounds)
    f, lead = _as_batch(frame)
    theta = _extract_theta(pose.reshape(-1, 3)).to(f.dtype)
    grid = F.affine_grid(theta, [f.shape[0], 1, glimpse_size, glimpse_size], align_corners=False)
    out = F.grid_sample(f, grid, mode="bilinear", padding_mode="zeros", align_corners=False)
    return out.reshape(*lead, glimpse_size, glimpse_size)


def pose_from_pixels(row: float, col: float, extent: float, frame_size: int) -> tuple[float, float, float]:
    """Pose of a square patch with top-left ``(row, col)`` and side ``extent`` pixels."""
    tx = 2.0 * (col + extent / 2) / frame_size - 1.0
    ty = 2.0 * (row + extent / 2) / frame_size - 1.0
    return tx, ty, extent / frame_size
