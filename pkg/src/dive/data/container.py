"""DIVE1 dataset container.

Layout (little endian)::

    header   magic b"DIVE1" | version u16 | N u16 | T u16 | H u16 | W u16
             | G u16 | scenario u8 | count u32 | seed i64
    sample   corrupted  T*H*W u8
             complete   T*H*W u8
             mask       N*T   u8
             labels     N     u8
             positions  N*T*2 i16   (row, col of each object's patch)
             patches    N*T*G*G u8  (object glyph at each step)
"""
from __future__ import annotations

import os
import struct
from pathlib import Path
from typing import Iterable

import numpy as np

from .scenarios import SCENARIOS, VideoSample

MAGIC = b"DIVE1"
VERSION = 1
_HEADER = struct.Struct("<5sHHHHHHBIq")


class DataFormatError(IOError):
    """Malformed or incompatible dataset file."""


def _u8(x: np.ndarray) -> bytes:
    return np.round(np.asarray(x) * 255.0).astype(np.uint8).tobytes()


def write_dataset(path, samples: Iterable[VideoSample], scenario: int, seed: int) -> Path:
    """Write samples atomically (temp file then rename)."""
    samples = list(samples)
    if not samples:
        raise ValueError("no samples to write")
    s0 = samples[0]
    N, T = s0.object_missing_mask.shape
    H, W = s0.complete.shape[1:]
    G = s0.patches.shape[-1]
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, N, T, H, W, G, scenario, len(samples), seed))
        for s in samples:
            if s.object_missing_mask.shape != (N, T) or s.complete.shape != (T, H, W):
                raise ValueError("samples must share N, T, H, W")
            fh.write(_u8(s.corrupted))
            fh.write(_u8(s.complete))
            fh.write(s.object_missing_mask.astype(np.uint8).tobytes())
            fh.write(s.labels.astype(np.uint8).tobytes())
            fh.write(s.positions.astype("<i2").tobytes())
            fh.write(_u8(s.patches))
    os.replace(tmp, path)
    return path


def read_header(path) -> dict:
    with open(path, "rb") as fh:
        raw = fh.read(_HEADER.size)
    if len(raw) < _HEADER.size:
        raise DataFormatError(f"{path}: truncated header")
    magic, version, N, T, H, W, G, scenario, count, seed = _HEADER.unpack(raw)
    if magic != MAGIC:
        raise DataFormatError(f"{path}: not a DIVE1 file")
    if version != VERSION:
        raise DataFormatError(f"{path}: unsupported version {version}")
    return dict(version=version, N=N, T=T, H=H, W=W, G=G, scenario=scenario, count=count, seed=seed)


def read_dataset(path) -> tuple[dict, list[VideoSample]]:
    header = read_header(path)
    N, T, H, W, G = (header[k] for k in ("N", "T", "H", "W", "G"))
    frame_bytes = T * H * W
    sizes = [frame_bytes, frame_bytes, N * T, N, N * T * 2 * 2, N * T * G * G]
    per_sample = sum(sizes)
    data = Path(path).read_bytes()[_HEADER.size:]
    if len(data) != per_sample * header["count"]:
        raise DataFormatError(f"{path}: expected {header['count']} samples, size mismatch")
    samples = []
    for j in range(header["count"]):
        off = j * per_sample
        chunks = []
        for n in sizes:
            chunks.append(data[off:off + n])
            off += n
        f32 = lambda b, shape: (np.frombuffer(b, np.uint8).reshape(shape) / np.float32(255.0)).astype(np.float32)
        samples.append(VideoSample(
            corrupted=f32(chunks[0], (T, H, W)),
            complete=f32(chunks[1], (T, H, W)),
            object_missing_mask=np.frombuffer(chunks[2], np.uint8).reshape(N, T).copy(),
            labels=np.frombuffer(chunks[3], np.uint8).astype(np.int64),
            positions=np.frombuffer(chunks[4], "<i2").reshape(N, T, 2).astype(np.int64),
            patches=f32(chunks[5], (N, T, G, G)),
            scenario_id=SCENARIOS.get(header["scenario"]),
            seed=(header["seed"], j),
        ))
    return header, samples
