"""Placing a glimpse into a frame and reading it back out."""
import numpy as np
import torch

from dive.data.mnist import load_glyphs
from dive.spatial import extract, place, pose_from_pixels

glyphs, labels = load_glyphs("train")
digit = torch.tensor(glyphs[0] / 255.0)
print("digit label:", labels[0])

# a pose is (tx, ty, scale) in normalized frame coordinates
pose = torch.tensor(pose_from_pixels(row=8, col=30, extent=28, frame_size=64), dtype=torch.float64)
print("pose for a 28px patch at row 8, col 30:", pose.numpy().round(4))

frame = place(digit, pose, 64)
crop = extract(frame, pose, 28)
print("round-trip max error:", float((crop - digit).abs().max()))

# the glimpse lands where expected: all its mass is inside the target box
box = frame[8:36, 30:58].sum() / frame.sum()
print("fraction of mass inside the box:", float(box))

# scale controls size; the same glimpse at half the extent
small = place(digit, torch.tensor([0.0, 0.0, 0.22], dtype=torch.float64), 64)
rows = np.flatnonzero(small.numpy().max(1) > 0.1)
print("half-size digit spans rows", rows.min(), "to", rows.max())

# gradients reach the pose, which is what lets the model learn where objects are:
# recover the position of a copy shifted by about a pixel, by gradient descent on tx, ty
# (thin strokes make the loss bumpy further out, so the start is kept close)
target = place(digit, torch.tensor([0.5, -0.25, 0.4375], dtype=torch.float64), 64)
p = torch.tensor([0.46, -0.28, 0.4375], dtype=torch.float64, requires_grad=True)
opt = torch.optim.Adam([p], lr=0.003)
for step in range(200):
    opt.zero_grad()
    loss = ((place(digit, p, 64) - target) ** 2).sum()
    loss.backward()
    p.grad[2] = 0.0  # keep the scale fixed
    opt.step()
print("recovered offsets:", p.detach().numpy()[:2].round(3), "true: [0.5, -0.25]")
