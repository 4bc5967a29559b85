"""Sum images and variance-stabilized denoising (first pipeline stage)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .sensor import SensorConfig

NLM_PATCH = 7
NLM_SEARCH = 21


@dataclass
class SumImage:
    """Per-pixel sum of consecutive readout frames.

    ``start``/``stop`` are the frame indices actually summed (``stop`` exclusive);
    ``truncated`` is set when the requested window ran past the stream ends.
    """

    values: np.ndarray
    window_size: int
    start: int = 0
    stop: int = 0
    truncated: bool = False

    @property
    def mean_frame(self) -> np.ndarray:
        return self.values / self.window_size


def sum_window(frames, center_index: int, window_size: int) -> SumImage:
    """Sum ``window_size`` frames centred on ``center_index``.

    Near the ends of the stream the window shrinks to the frames available
    (it is not shifted), and ``truncated`` is set.
    """
    if window_size < 1:
        raise ValueError(f"window_size must be >= 1, got {window_size}")
    n = len(frames)
    if not 0 <= center_index < n:
        raise ValueError(f"center_index {center_index} outside stream of {n} frames")
    before = (window_size - 1) // 2
    start = center_index - before
    stop = start + window_size
    lo, hi = max(start, 0), min(stop, n)
    total = np.zeros(np.shape(frames[lo]), dtype=np.int64)
    for f in frames[lo:hi]:
        total += np.asarray(f, dtype=np.int64)
    return SumImage(total, hi - lo, lo, hi, truncated=(lo, hi) != (start, stop))


def generalized_anscombe(x, sigma_read: float):
    """``2 sqrt(x + 3/8 + sigma^2)``; negative inputs are treated as 0."""
    x = np.maximum(np.asarray(x, dtype=np.float64), 0.0)
    return 2.0 * np.sqrt(x + 0.375 + sigma_read**2)


def inverse_anscombe(y, sigma_read: float):
    """Algebraic inverse of :func:`generalized_anscombe`, clamped at 0."""
    y = np.asarray(y, dtype=np.float64)
    return np.maximum((y / 2.0) ** 2 - 0.375 - sigma_read**2, 0.0)


def denoise_stabilized(image, strength: float, noise_sigma: float = 1.0) -> np.ndarray:
    """Non-local means for roughly unit-variance Gaussian noise.

    7x7 patches, 21x21 search window, weights
    ``exp(-max(d2 - 2 sigma^2, 0) / h^2)`` with ``d2`` the mean squared patch
    distance and ``h = strength``. Borders are handled by reflection.
    """
    if strength < 0:
        raise ValueError(f"strength must be >= 0, got {strength}")
    img = np.asarray(image, dtype=np.float64)
    if strength == 0:
        return img.copy()
    pr = NLM_PATCH // 2
    sr = NLM_SEARCH // 2
    pad = pr + sr
    padded = np.pad(img, pad, mode="reflect")
    h, w = img.shape
    h2 = strength**2
    bias = 2.0 * noise_sigma**2
    acc = np.zeros_like(img)
    wsum = np.zeros_like(img)
    center = padded[sr : sr + h + 2 * pr, sr : sr + w + 2 * pr]
    for dy in range(-sr, sr + 1):
        for dx in range(-sr, sr + 1):
            shifted = padded[sr + dy : sr + dy + h + 2 * pr, sr + dx : sr + dx + w + 2 * pr]
            d2 = ndimage.uniform_filter((center - shifted) ** 2, NLM_PATCH, mode="constant")
            d2 = d2[pr : pr + h, pr : pr + w]
            wgt = np.exp(-np.maximum(d2 - bias, 0.0) / h2)
            acc += wgt * shifted[pr : pr + h, pr : pr + w]
            wsum += wgt
    return acc / wsum


def predenoise(sum_image: SumImage, cfg: SensorConfig, strength: float) -> np.ndarray:
    """Denoised per-frame signal from a sum image.

    Stabilize the sum (read-noise variance scaled by the number of readouts),
    run non-local means, invert and divide by the window size.
    """
    sigma = cfg.read_noise * np.sqrt(sum_image.window_size)
    z = generalized_anscombe(sum_image.values, sigma)
    z = denoise_stabilized(z, strength)
    return inverse_anscombe(z, sigma) / sum_image.window_size
