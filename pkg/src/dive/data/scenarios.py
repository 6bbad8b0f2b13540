"""Moving-MNIST sequences and the three missing-data corruption scenarios.

A sample keeps, besides the two frame streams, the per-object glyph patch and
top-left position at every step, so object layers can be rebuilt exactly
(needed for object matching during evaluation).

Time indices are 0-based in code. The out-of-scene start step is drawn from
1-based steps 3..9, i.e. 0-based indices 2..8.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..config import ConfigError
from . import mnist
from .elastic import displacement_field, warp

PARTIAL_OCCLUSION = "partial_occlusion"
OUT_OF_SCENE = "out_of_scene"
VARYING_APPEARANCE = "varying_appearance"
SCENARIOS = {1: PARTIAL_OCCLUSION, 2: OUT_OF_SCENE, 3: VARYING_APPEARANCE}

OCCLUDED_ROWS = 32
FIRST_MISSING_STEP = (3, 9)  # 1-based, inclusive
ALPHA_START = 100.0
ELASTIC_SIGMA = 4.0


def quantize(x: np.ndarray) -> np.ndarray:
    """Snap intensities to the uint8 grid so container round trips are exact."""
    k = np.round(np.clip(x, 0.0, 1.0) * 255.0).astype(np.uint8)
    return (k / np.float32(255.0)).astype(np.float32)


@dataclass
class VideoSample:
    corrupted: np.ndarray  # (T, H, W) float32
    complete: np.ndarray  # (T, H, W) float32
    object_missing_mask: np.ndarray  # (N, T) uint8
    patches: np.ndarray  # (N, T, G, G) float32, glyph of object i at step t
    positions: np.ndarray  # (N, T, 2) int64, (row, col) of patch top-left
    labels: np.ndarray  # (N,) digit classes
    scenario_id: str | None = None
    seed: int | Sequence[int] = 0

    @property
    def num_objects(self) -> int:
        return self.object_missing_mask.shape[0]

    @property
    def length(self) -> int:
        return self.complete.shape[0]

    def object_layers(self) -> np.ndarray:
        """(N, T, H, W) per-object frames of the complete video."""
        N, T = self.object_missing_mask.shape
        H, W = self.complete.shape[1:]
        layers = np.zeros((N, T, H, W), np.float32)
        for i in range(N):
            for t in range(T):
                _paste_max(layers[i, t], self.patches[i, t], self.positions[i, t])
        return layers

    def replace(self, **changes) -> "VideoSample":
        return dataclasses.replace(self, **changes)


def _paste_max(frame: np.ndarray, patch: np.ndarray, pos) -> None:
    r, c = int(pos[0]), int(pos[1])
    g = patch.shape[0]
    H, W = frame.shape
    r0, c0 = max(r, 0), max(c, 0)
    r1, c1 = min(r + g, H), min(c + g, W)
    if r1 <= r0 or c1 <= c0:
        return
    region = frame[r0:r1, c0:c1]
    np.maximum(region, patch[r0 - r:r1 - r, c0 - c:c1 - c], out=region)


def composite(patches: np.ndarray, positions: np.ndarray, frame_size: int,
              present: np.ndarray | None = None) -> np.ndarray:
    """Per-pixel maximum over objects; ``present[i, t] == 0`` drops object i at t."""
    N, T = patches.shape[:2]
    frames = np.zeros((T, frame_size, frame_size), np.float32)
    for i in range(N):
        for t in range(T):
            if present is None or present[i, t]:
                _paste_max(frames[t], patches[i, t], positions[i, t])
    return frames


def bouncing_trajectory(start: np.ndarray, velocity: np.ndarray, T: int, limit: float) -> np.ndarray:
    """Straight-line motion reflected at [0, limit] on both axes; (T, 2) floats."""
    pos = np.array(start, np.float64)
    vel = np.array(velocity, np.float64)
    out = np.empty((T, 2))
    for t in range(T):
        out[t] = pos
        pos = pos + vel
        for k in range(2):
            # fold repeatedly in case |v| exceeds the box
            while pos[k] < 0 or pos[k] > limit:
                if pos[k] < 0:
                    pos[k] = -pos[k]
                else:
                    pos[k] = 2 * limit - pos[k]
                vel[k] = -vel[k]
    return out


def synthesize_clean(num_objects: int = 2, T: int = 20, rng_seed=0, *,
                     speed: float = 3.6, frame_size: int = 64, split: str = "train",
                     glyphs: tuple[np.ndarray, np.ndarray] | None = None) -> VideoSample:
    """Uncorrupted moving-digit sequence; a pure function of its arguments."""
    if num_objects < 1:
        raise ConfigError("num_objects must be >= 1")
    if T < 2:
        raise ConfigError("T must be >= 2")
    images, labels = glyphs if glyphs is not None else mnist.load_glyphs(split)
    g = images.shape[-1]
    limit = frame_size - g
    if limit < 0:
        raise ConfigError("glyph larger than frame")
    rng = np.random.default_rng(rng_seed)

    patches = np.empty((num_objects, T, g, g), np.float32)
    positions = np.empty((num_objects, T, 2), np.int64)
    obj_labels = np.empty(num_objects, np.int64)
    for i in range(num_objects):
        k = rng.integers(len(images))
        obj_labels[i] = labels[k]
        patches[i] = quantize(images[k] / 255.0)[None]
        start = rng.uniform(0, limit, size=2)
        angle = rng.uniform(0, 2 * np.pi)
        vel = speed * np.array([np.sin(angle), np.cos(angle)])
        positions[i] = np.rint(bouncing_trajectory(start, vel, T, limit)).astype(np.int64)

    frames = composite(patches, positions, frame_size)
    return VideoSample(
        corrupted=frames.copy(), complete=frames,
        object_missing_mask=np.zeros((num_objects, T), np.uint8),
        patches=patches, positions=positions, labels=obj_labels,
        scenario_id=None, seed=rng_seed,
    )


def visibility_mask(scenario: int | str | None, frame_size: int = 64) -> np.ndarray:
    """(H, W) float mask of pixels observable in the corrupted stream."""
    mask = np.ones((frame_size, frame_size), np.float32)
    if scenario in (1, PARTIAL_OCCLUSION):
        mask[:OCCLUDED_ROWS] = 0.0
    return mask


def apply_partial_occlusion(sample: VideoSample) -> VideoSample:
    """Blank the upper 32 rows; objects whose support lies there are missing."""
    corrupted = sample.complete.copy()
    corrupted[:, :OCCLUDED_ROWS] = 0.0
    layers = sample.object_layers()
    visible = layers[:, :, OCCLUDED_ROWS:].reshape(*layers.shape[:2], -1).max(-1) > 0
    mask = (~visible).astype(np.uint8)
    return sample.replace(corrupted=corrupted, object_missing_mask=mask, scenario_id=PARTIAL_OCCLUSION)


def draw_first_missing(rng: np.random.Generator, size=None):
    """0-based index of the first removed step (1-based 3..9)."""
    lo, hi = FIRST_MISSING_STEP
    return rng.integers(lo, hi + 1, size=size) - 1


def _remove(sample: VideoSample, mask: np.ndarray, scenario_id: str) -> VideoSample:
    frame_size = sample.complete.shape[-1]
    corrupted = composite(sample.patches, sample.positions, frame_size, present=1 - mask)
    return sample.replace(corrupted=corrupted, object_missing_mask=mask, scenario_id=scenario_id)


def apply_out_of_scene(sample: VideoSample, rng: np.random.Generator) -> VideoSample:
    """Remove each object (independently drawn start) for two consecutive steps."""
    if sample.length < 11:
        raise ConfigError("out-of-scene scenario needs T >= 11")
    mask = np.zeros_like(sample.object_missing_mask)
    for i in range(sample.num_objects):
        t0 = draw_first_missing(rng)
        mask[i, t0:t0 + 2] = 1
    return _remove(sample, mask, OUT_OF_SCENE)


def deformation_alpha(t: int, T: int, alpha0: float = ALPHA_START) -> float:
    """Linear decay from alpha0 at the first step to 0 at the last (0-based t)."""
    return alpha0 * (1.0 - t / (T - 1))


def apply_varying_appearance(sample: VideoSample, rng: np.random.Generator) -> VideoSample:
    """Per-object elastic deformation fading to zero, plus one removed step.

    The deformation is an appearance change, so both streams carry it; only
    the removal is corruption.
    """
    if sample.length < 11:
        raise ConfigError("varying-appearance scenario needs T >= 11")
    T = sample.length
    patches = sample.patches.copy()
    for i in range(sample.num_objects):
        field_seed = int(rng.integers(2**63))
        base = sample.patches[i, 0].astype(np.float64)
        dx, dy = displacement_field(base.shape, ELASTIC_SIGMA, field_seed)
        for t in range(T):
            patches[i, t] = quantize(warp(base, dx, dy, deformation_alpha(t, T)))
    frame_size = sample.complete.shape[-1]
    complete = composite(patches, sample.positions, frame_size)
    mask = np.zeros_like(sample.object_missing_mask)
    for i in range(sample.num_objects):
        mask[i, draw_first_missing(rng)] = 1
    deformed = sample.replace(patches=patches, complete=complete)
    return _remove(deformed, mask, VARYING_APPEARANCE)


def make_sample(scenario: int, seed, *, num_objects: int = 2, T: int = 20, speed: float = 3.6,
                split: str = "train", glyphs=None) -> VideoSample:
    """Clean sample from ``seed`` followed by the scenario's corruption."""
    if scenario not in SCENARIOS:
        raise ConfigError(f"scenario must be one of {sorted(SCENARIOS)}, got {scenario}")
    seq = np.random.SeedSequence(seed if not isinstance(seed, (list, tuple)) else list(seed))
    clean_seed, corrupt_seed = seq.spawn(2)
    sample = synthesize_clean(num_objects, T, np.random.default_rng(clean_seed), speed=speed,
                              split=split, glyphs=glyphs)
    rng = np.random.default_rng(corrupt_seed)
    if scenario == 1:
        out = apply_partial_occlusion(sample)
    elif scenario == 2:
        out = apply_out_of_scene(sample, rng)
    else:
        out = apply_varying_appearance(sample, rng)
    return out.replace(seed=seed)


def make_batch(scenario: int, base_seed: int, indices, **kw) -> list[VideoSample]:
    """Samples whose RNG streams derive from ``(base_seed, index)``."""
    return [make_sample(scenario, (int(base_seed), int(j)), **kw) for j in indices]


def stack(samples: Sequence[VideoSample]) -> dict[str, np.ndarray]:
    """Batch arrays: corrupted/complete (B, T, H, W), mask (B, N, T)."""
    return {
        "corrupted": np.stack([s.corrupted for s in samples]),
        "complete": np.stack([s.complete for s in samples]),
        "mask": np.stack([s.object_missing_mask for s in samples]),
    }
