"""Frame-level image metrics.

Per-frame BCE and MSE are sums over the (visible) pixels of one frame. PSNR
uses dynamic range 1 and the per-pixel mean squared error, capped at 100 dB.
SSIM uses an 11x11 Gaussian window (sigma 1.5), K1=0.01, K2=0.03, L=1 and
averages over fully-contained windows only.
"""
from __future__ import annotations

import numpy as np
from scipy import ndimage

BCE_EPS = 1e-7
PSNR_CAP = 100.0
SSIM_WIN = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _xlogy(x, y):
    out = np.zeros(np.broadcast(x, y).shape)
    nz = np.broadcast_to(x, out.shape) != 0
    xb = np.broadcast_to(x, out.shape)
    yb = np.broadcast_to(y, out.shape)
    out[nz] = xb[nz] * np.log(yb[nz])
    return out


def bce_per_frame(pred, target, mask=None) -> np.ndarray:
    """Sum of pixel binary cross-entropies over the last two axes."""
    p = np.clip(np.asarray(pred, np.float64), BCE_EPS, 1 - BCE_EPS)
    x = np.asarray(target, np.float64)
    e = -(_xlogy(x, p) + _xlogy(1 - x, 1 - p))
    if mask is not None:
        e = e * mask
    return e.sum((-2, -1))


def mse_per_frame(pred, target, mask=None) -> np.ndarray:
    e = (np.asarray(pred, np.float64) - np.asarray(target, np.float64)) ** 2
    if mask is not None:
        e = e * mask
    return e.sum((-2, -1))


def psnr(pred, target, mask=None) -> np.ndarray:
    n = np.prod(np.shape(pred)[-2:]) if mask is None else float(np.sum(mask))
    mse = mse_per_frame(pred, target, mask) / n
    with np.errstate(divide="ignore"):
        val = 10.0 * np.log10(1.0 / mse)
    return np.minimum(np.where(mse == 0, PSNR_CAP, val), PSNR_CAP)


def gaussian_window(size: int = SSIM_WIN, sigma: float = SSIM_SIGMA) -> np.ndarray:
    """Normalized 1-D Gaussian taps."""
    r = np.arange(size) - (size - 1) / 2
    w = np.exp(-(r ** 2) / (2 * sigma ** 2))
    return w / w.sum()


def _filter_valid(img: np.ndarray, w: np.ndarray) -> np.ndarray:
    out = ndimage.correlate1d(img, w, axis=-1, mode="constant")
    out = ndimage.correlate1d(out, w, axis=-2, mode="constant")
    r = len(w) // 2
    return out[..., r:img.shape[-2] - r, r:img.shape[-1] - r]


def ssim(pred, target, data_range: float = 1.0) -> np.ndarray:
    """Mean SSIM over valid windows of each frame (last two axes)."""
    x = np.asarray(pred, np.float64)
    y = np.asarray(target, np.float64)
    if min(x.shape[-2:]) < SSIM_WIN:
        raise ValueError(f"frames must be at least {SSIM_WIN} pixels per side")
    w = gaussian_window()
    lead = x.shape[:-2]
    x2 = x.reshape(-1, *x.shape[-2:])
    y2 = y.reshape(-1, *y.shape[-2:])
    vals = []
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    for a, b in zip(x2, y2):
        mx, my = _filter_valid(a, w), _filter_valid(b, w)
        sxx = _filter_valid(a * a, w) - mx ** 2
        syy = _filter_valid(b * b, w) - my ** 2
        sxy = _filter_valid(a * b, w) - mx * my
        s = ((2 * mx * my + c1) * (2 * sxy + c2)) / ((mx ** 2 + my ** 2 + c1) * (sxx + syy + c2))
        vals.append(s.mean())
    return np.asarray(vals).reshape(lead)


def visible_crop(frames: np.ndarray, mask: np.ndarray | None) -> np.ndarray:
    """Bounding box of the visible region, for windowed metrics like SSIM."""
    if mask is None or mask.all():
        return frames
    rows = np.flatnonzero(mask.any(1))
    cols = np.flatnonzero(mask.any(0))
    return frames[..., rows[0]:rows[-1] + 1, cols[0]:cols[-1] + 1]


def frame_metrics(pred, target, mask=None) -> dict[str, np.ndarray]:
    """All four per-frame metrics for ``(..., H, W)`` arrays."""
    return {
        "bce": bce_per_frame(pred, target, mask),
        "mse": mse_per_frame(pred, target, mask),
        "psnr": psnr(pred, target, mask),
        "ssim": ssim(visible_crop(pred, mask), visible_crop(target, mask)),
    }


def balanced_accuracy(pred, truth) -> float:
    """Mean of per-class recalls; a class absent from ``truth`` is skipped."""
    p = np.asarray(pred).astype(bool).ravel()
    t = np.asarray(truth).astype(bool).ravel()
    recalls = [np.mean(p[t == c] == c) for c in (False, True) if np.any(t == c)]
    if not recalls:
        raise ValueError("empty label arrays")
    return float(np.mean(recalls))
