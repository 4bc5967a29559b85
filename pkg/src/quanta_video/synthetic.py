"""Synthetic test scenes: textured canvases and translating video clips."""

from __future__ import annotations

import numpy as np
from scipy import ndimage


def textured_canvas(height: int, width: int, seed: int = 0) -> np.ndarray:
    """Band-limited texture with a few hard-edged shapes, values in [0.05, 0.95]."""
    rng = np.random.default_rng(seed)
    img = np.zeros((height, width))
    for sigma, amp in ((8.0, 1.0), (3.0, 0.8), (1.0, 0.5)):
        layer = ndimage.gaussian_filter(rng.standard_normal((height, width)), sigma, mode="wrap")
        img += amp * layer / layer.std()
    for _ in range(max(1, height * width // 4096)):
        y0, x0 = rng.integers(0, height), rng.integers(0, width)
        hh, ww = rng.integers(6, 24, size=2)
        img[y0 : y0 + hh, x0 : x0 + ww] += rng.choice([-1.5, 1.5])
    img = (img - img.min()) / (img.max() - img.min())
    return 0.05 + 0.9 * img


def translating_clip(
    n_frames: int,
    height: int,
    width: int,
    velocity: tuple[int, int] = (3, 0),
    seed: int = 0,
) -> np.ndarray:
    """Ground-truth frames of a canvas moving ``velocity = (vx, vy)`` pixels per frame.

    Frame ``t`` shows content that was at ``(x + vx t, y + vy t)`` in frame 0
    shifted to ``(x, y)``, i.e. the camera pans by ``velocity`` each frame.
    """
    vx, vy = velocity
    pad_x = abs(vx) * n_frames + 1
    pad_y = abs(vy) * n_frames + 1
    canvas = textured_canvas(height + 2 * pad_y, width + 2 * pad_x, seed)
    frames = []
    for t in range(n_frames):
        y0 = pad_y + vy * t
        x0 = pad_x + vx * t
        frames.append(canvas[y0 : y0 + height, x0 : x0 + width])
    return np.stack(frames)
