"""PNG grids of model outputs.

Rows, top to bottom: ground truth, one row per object's contribution, the
composed output, and a strip of predicted missing labels (one band per
object; white = missing).
"""
from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

LABEL_WIDTH = 56
PAD = 2


def _tile(frames: np.ndarray, pad: int = PAD) -> np.ndarray:
    T, H, W = frames.shape
    row = np.full((H, T * (W + pad) - pad), 0.35, np.float32)
    for t in range(T):
        row[:, t * (W + pad): t * (W + pad) + W] = frames[t]
    return row


def label_strip(z_m: np.ndarray, T: int, frame_size: int) -> np.ndarray:
    """(N, K) labels -> image band of height frame_size, width of T tiles."""
    N, K = z_m.shape
    band = frame_size // max(N, 1)
    strip = np.zeros((band * N, T, frame_size), np.float32) + 0.15
    for i in range(N):
        for t in range(K):
            strip[i * band:(i + 1) * band, t] = 1.0 if z_m[i, t] > 0.5 else 0.0
    tiles = strip.transpose(1, 0, 2)  # (T, rows, W)
    img = _tile(tiles)
    out = np.full((frame_size, img.shape[1]), 0.35, np.float32)
    out[:img.shape[0]] = img
    return out


def figure_rows(ground_truth: np.ndarray, contributions: np.ndarray, output: np.ndarray,
                z_m: np.ndarray) -> list[tuple[str, np.ndarray]]:
    """Labeled row images: gt (T,H,W), contributions (N,T,H,W), output (T,H,W), z_m (N,K)."""
    T, S = output.shape[0], output.shape[-1]
    rows = [("truth", _tile(ground_truth))]
    rows += [(f"obj {i + 1}", _tile(contributions[i])) for i in range(len(contributions))]
    rows.append(("output", _tile(output)))
    rows.append(("missing", label_strip(z_m, T, S)))
    return rows


def render_grid(rows: list[tuple[str, np.ndarray]], path, scale: int = 2) -> Path:
    width = max(r.shape[1] for _, r in rows)
    height = sum(r.shape[0] + PAD for _, r in rows)
    canvas = Image.new("L", (LABEL_WIDTH + width, height), color=40)
    draw = ImageDraw.Draw(canvas)
    y = 0
    for name, img in rows:
        arr = (np.clip(img, 0, 1) * 255).astype(np.uint8)
        canvas.paste(Image.fromarray(arr, "L"), (LABEL_WIDTH, y))
        draw.text((4, y + img.shape[0] // 2 - 5), name, fill=230)
        y += img.shape[0] + PAD
    if scale != 1:
        canvas = canvas.resize((canvas.width * scale, canvas.height * scale), Image.NEAREST)
    path = Path(path)
    canvas.save(path, format="PNG")
    return path


def render_sample(model, sample, path) -> Path:
    """Run the model in eval mode on one sample and write its grid."""
    from .evaluation import predict

    out = predict(model, sample.corrupted[None])
    K = model.cfg.n_input
    truth = np.concatenate([sample.corrupted[:K], sample.complete[K:]])
    rows = figure_rows(truth, out.contributions[0].numpy(), out.frames[0].numpy(), out.z_m[0].numpy())
    return render_grid(rows, path)
