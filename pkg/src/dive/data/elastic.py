"""Elastic deformation of digit glyphs (smoothed random displacement fields)."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage


@dataclass(frozen=True)
class ElasticDeformParams:
    alpha: float
    sigma: float = 4.0
    field_seed: int = 0

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if self.sigma <= 0:
            raise ValueError("sigma must be > 0")


def displacement_field(shape, sigma: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Unit-intensity smoothed field; scale by alpha to get pixel displacements."""
    rng = np.random.default_rng(seed)
    dx = ndimage.gaussian_filter(rng.uniform(-1, 1, shape), sigma, mode="constant")
    dy = ndimage.gaussian_filter(rng.uniform(-1, 1, shape), sigma, mode="constant")
    return dx, dy


def warp(image: np.ndarray, dx: np.ndarray, dy: np.ndarray, alpha: float) -> np.ndarray:
    """Resample ``image`` at the uniform grid plus ``alpha * (dx, dy)``."""
    if alpha == 0:
        return image.astype(np.float64, copy=True)
    h, w = image.shape
    yy, xx = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    coords = np.stack([yy + alpha * dy, xx + alpha * dx])
    out = ndimage.map_coordinates(image.astype(np.float64), coords, order=1, mode="constant", cval=0.0)
    return np.clip(out, 0.0, 1.0)


def elastic_deform(image: np.ndarray, params: ElasticDeformParams) -> np.ndarray:
    """Deform a 2-D image in [0, 1]; ``alpha == 0`` returns the input unchanged."""
    dx, dy = displacement_field(image.shape, params.sigma, params.field_seed)
    return warp(image, dx, dy, params.alpha)
