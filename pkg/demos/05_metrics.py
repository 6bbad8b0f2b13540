"""The frame metrics on a few hand-made cases."""
import math

import numpy as np

from dive import metrics

rng = np.random.default_rng(0)
target = (rng.random((64, 64)) > 0.5).astype(float)

# a coin-flip prediction costs ln 2 per pixel
half = np.full((64, 64), 0.5)
print("BCE of constant 0.5:", metrics.bce_per_frame(half, target), "=", 4096 * math.log(2))

# a perfect prediction
print("perfect: MSE", metrics.mse_per_frame(target, target), "PSNR", metrics.psnr(target, target),
      "SSIM", metrics.ssim(target, target))

# shifting by one pixel hurts SSIM far more than the pixel counts suggest
shifted = np.roll(target, 1, axis=1)
print("one-pixel shift: MSE", metrics.mse_per_frame(shifted, target), "SSIM", round(float(metrics.ssim(shifted, target)), 3))

# reconstruction metrics under partial occlusion only look at the visible half
mask = np.zeros((64, 64))
mask[32:] = 1
noisy = np.clip(target + 0.2 * rng.standard_normal((64, 64)), 0, 1)
print("visible-only MSE:", metrics.mse_per_frame(noisy, target, mask), "of", metrics.mse_per_frame(noisy, target))
