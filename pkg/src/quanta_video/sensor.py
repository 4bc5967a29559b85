"""Few-bit quanta image sensor model.

Readout per pixel and frame::

    Y = ADC_[0, L]( Poisson(qe * exposure + dark_current / fps) + N(0, read_noise**2) )

with ``L = 2**nbits - 1``. Exposure is given in incident photons per pixel per
frame (before quantum efficiency). Besides the forward simulator, the module
provides the exact readout distribution used as an oracle, the inverse of the
mean response, and the bit-depth / frame-rate trade-off calculus.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special, stats

from . import rng

SATURATION_GUARD = 1e-3
POISSON_TAIL = 1e-12
GAUSS_SPAN = 8.0


class SaturationError(ValueError):
    """Mean readout too close to full well to be inverted."""


@dataclass(frozen=True)
class SensorConfig:
    """Sensor parameters.

    Attributes:
        qe: quantum efficiency, fraction in [0, 1].
        dark_current: electrons / pixel / second.
        read_noise: electrons RMS / pixel / readout.
        nbits: ADC bit depth, 1..16.
        fps: frames per second.
    """

    qe: float = 0.80
    dark_current: float = 1.6
    read_noise: float = 0.2
    nbits: int = 3
    fps: float = 2000.0

    def __post_init__(self):
        if not 0.0 <= self.qe <= 1.0:
            raise ValueError(f"qe must be in [0, 1], got {self.qe}")
        if self.dark_current < 0:
            raise ValueError(f"dark_current must be >= 0, got {self.dark_current}")
        if self.read_noise < 0:
            raise ValueError(f"read_noise must be >= 0, got {self.read_noise}")
        if int(self.nbits) != self.nbits or not 1 <= self.nbits <= 16:
            raise ValueError(f"nbits must be an integer in [1, 16], got {self.nbits}")
        if not self.fps > 0:
            raise ValueError(f"fps must be > 0, got {self.fps}")

    @property
    def full_well(self) -> int:
        """Largest ADC code ``L``."""
        return (1 << int(self.nbits)) - 1

    @property
    def dark_per_frame(self) -> float:
        return self.dark_current / self.fps

    def electrons(self, exposure):
        """Mean electrons per frame for an exposure in photons per frame."""
        return self.qe * np.asarray(exposure, dtype=np.float64) + self.dark_per_frame


def ppp_to_exposure(ppp: float, width: int, height: int) -> np.ndarray:
    """Constant exposure map of ``ppp`` photons per pixel per frame."""
    if ppp < 0:
        raise ValueError(f"ppp must be >= 0, got {ppp}")
    return np.full((height, width), float(ppp))


def scale_luminance(gt_image, ppp: float) -> np.ndarray:
    """Scale a [0, 1] image (or stack of images) so its mean equals ``ppp``.

    The mean is taken over the whole array, so passing a video stack keeps
    relative brightness between frames.
    """
    if ppp < 0:
        raise ValueError(f"ppp must be >= 0, got {ppp}")
    gt = np.asarray(gt_image, dtype=np.float64)
    if gt.size == 0 or not np.all(np.isfinite(gt)):
        raise ValueError("gt_image must be non-empty and finite")
    if gt.min() < 0 or gt.max() > 1:
        raise ValueError("gt_image values must lie in [0, 1]")
    mean = gt.mean()
    if ppp == 0:
        return np.zeros_like(gt)
    if mean == 0:
        raise ValueError("cannot scale an all-black image to a positive ppp")
    return gt * (ppp / mean)


def adc_quantize(analog, L: int):
    """Round half away from zero, then clamp to ``[0, L]``."""
    if L < 1:
        raise ValueError(f"L must be >= 1, got {L}")
    x = np.asarray(analog, dtype=np.float64)
    q = np.clip(np.sign(x) * np.floor(np.abs(x) + 0.5), 0, L)
    if q.ndim == 0:
        return int(q)
    return q.astype(np.int64)


def simulate_frame(exposure, cfg: SensorConfig, seed: int, frame_index: int) -> np.ndarray:
    """Draw one quantized readout frame.

    Each pixel's randomness comes from the Philox block addressed by
    ``(seed, frame_index, pixel index)``: a uniform drives inverse-CDF Poisson
    sampling, a Box-Muller normal drives read noise.

    Returns:
        uint16 array with values in ``[0, cfg.full_well]``.
    """
    exp = np.asarray(exposure, dtype=np.float64)
    if not np.all(np.isfinite(exp)) or (exp.size and exp.min() < 0):
        raise ValueError("exposure must be finite and non-negative")
    lam = cfg.electrons(exp).ravel()
    u, z = rng.uniform_and_normal(seed, frame_index, lam.size)
    counts = stats.poisson.ppf(u, lam)
    analog = counts + cfg.read_noise * z
    return adc_quantize(analog, cfg.full_well).reshape(exp.shape).astype(np.uint16)


def simulate_sequence(exposures, cfg: SensorConfig, seed: int, start_index: int = 0) -> np.ndarray:
    """Simulate a stack of exposures; frame ``i`` uses index ``start_index + i``."""
    return np.stack(
        [simulate_frame(e, cfg, seed, start_index + i) for i, e in enumerate(exposures)]
    )


def _poisson_support(lam: float, kmax_cap: int) -> np.ndarray:
    lo = 0 if lam == 0 else int(stats.poisson.ppf(POISSON_TAIL / 2, lam))
    hi = int(stats.poisson.isf(POISSON_TAIL / 2, lam)) + 1 if lam > 0 else 0
    lo = max(0, lo - 1)
    return np.arange(min(lo, kmax_cap), min(hi, kmax_cap) + 1)


def readout_pmf(lam: float, cfg: SensorConfig) -> np.ndarray:
    """Exact distribution of the readout ``Y`` for Poisson rate ``lam`` (electrons/frame).

    The Gaussian part is integrated in closed form through the normal CDF. Counts
    above ``L + 8 sigma + 1`` are lumped together since they always read ``L``;
    the remaining Poisson support is cut where tail mass drops below 1e-12.

    Returns:
        Probabilities for codes ``0..L``.
    """
    if lam < 0 or not math.isfinite(lam):
        raise ValueError(f"lambda must be finite and >= 0, got {lam}")
    L = cfg.full_well
    sigma = cfg.read_noise
    span = int(math.ceil(GAUSS_SPAN * sigma)) + 1
    K = L + span  # every count >= K reads as L
    ks = _poisson_support(lam, K - 1)
    pk = stats.poisson.pmf(ks, lam)
    pmf = np.zeros(L + 1)
    if ks[-1] == K - 1:
        pmf[L] += stats.poisson.sf(K - 1, lam)
    if sigma == 0:
        np.add.at(pmf, np.clip(ks, 0, L), pk)
        return pmf
    j_lo = max(0, int(ks[0]) - span)
    j_hi = min(L, int(ks[-1]) + span)
    js = np.arange(j_lo, j_hi + 1)
    upper = np.where(js == L, np.inf, js + 0.5)
    lower = np.where(js == 0, -np.inf, js - 0.5)
    # codes outside [j_lo, j_hi] are beyond 8 sigma of every count considered
    if j_hi < L:
        upper[-1] = np.inf
    if j_lo > 0:
        lower[0] = -np.inf
    d = ks[:, None].astype(np.float64)
    cond = special.ndtr((upper[None, :] - d) / sigma) - special.ndtr((lower[None, :] - d) / sigma)
    pmf[j_lo : j_hi + 1] += pk @ cond
    return pmf


def readout_moments(lam: float, cfg: SensorConfig) -> tuple[float, float, float]:
    """Mean, variance and fourth central moment of the readout."""
    p = readout_pmf(lam, cfg)
    j = np.arange(p.size, dtype=np.float64)
    mean = float(p @ j)
    dev = j - mean
    return mean, float(p @ dev**2), float(p @ dev**4)


def expected_readout(lam: float, cfg: SensorConfig) -> float:
    """E[Y | lam], with ``lam`` the total Poisson rate in electrons per frame."""
    p = readout_pmf(lam, cfg)
    return float(p @ np.arange(p.size))


def readout_variance(lam: float, cfg: SensorConfig) -> float:
    return readout_moments(lam, cfg)[1]


def _saturation_lambda(cfg: SensorConfig, target: float) -> float:
    hi = max(1.0, float(cfg.full_well))
    while expected_readout(hi, cfg) < target:
        hi *= 2.0
        if hi > 1e9:
            raise SaturationError("response never reaches target")
    return hi


def invert_response(mean_y: float, cfg: SensorConfig, rtol: float = 1e-6) -> float:
    """Rate ``lam`` whose expected readout equals ``mean_y`` (bisection).

    Raises:
        SaturationError: ``mean_y >= L - 1e-3``.
        ValueError: ``mean_y < 0``.
    """
    L = cfg.full_well
    if mean_y < 0:
        raise ValueError(f"mean_y must be >= 0, got {mean_y}")
    if mean_y >= L - SATURATION_GUARD:
        raise SaturationError(f"mean readout {mean_y} is within {SATURATION_GUARD} of full well {L}")
    if mean_y <= expected_readout(0.0, cfg):
        return 0.0
    lo, hi = 0.0, _saturation_lambda(cfg, mean_y)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if expected_readout(mid, cfg) < mean_y:
            lo = mid
        else:
            hi = mid
        if hi - lo <= rtol * hi * 0.5:
            break
    return 0.5 * (lo + hi)


class ResponseTable:
    """Tabulated mean/variance response for fast per-pixel lookups.

    The rate grid is geometric up to the point where the mean readout reaches
    the saturation guard; lookups interpolate linearly.
    """

    def __init__(self, cfg: SensorConfig, size: int = 4096, lam_min: float = 1e-4):
        self.cfg = cfg
        L = cfg.full_well
        self.lam_max = _bisect_rate(cfg, L - SATURATION_GUARD)
        lams = np.concatenate([[0.0], np.geomspace(lam_min, self.lam_max, size - 1)])
        moments = np.array([readout_moments(x, cfg)[:2] for x in lams])
        means = np.maximum.accumulate(moments[:, 0])
        self.lams = lams
        self.means = means
        self.variances = moments[:, 1]

    def invert(self, mean_y) -> np.ndarray:
        """Vectorized inverse response; inputs are clamped to the invertible range."""
        m = np.asarray(mean_y, dtype=np.float64)
        return np.interp(m, self.means, self.lams, left=0.0, right=self.lam_max)

    def variance_at_mean(self, mean_y) -> np.ndarray:
        """Readout variance at the rate that produces mean readout ``mean_y``."""
        m = np.asarray(mean_y, dtype=np.float64)
        return np.interp(m, self.means, self.variances)


def _bisect_rate(cfg: SensorConfig, target: float) -> float:
    lo, hi = 0.0, _saturation_lambda(cfg, target)
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        if expected_readout(mid, cfg) < target:
            lo = mid
        else:
            hi = mid
    return hi


@dataclass(frozen=True)
class TradeoffRow:
    nbits: int
    fps: int
    read_noise_rate: float  # electrons / pixel / second
    data_rate: float  # Mb / s


def tradeoff_row(
    nbits: int, base_fps_1bit: float = 10_000, sigma_read: float = 0.2, npixels: int = 9600
) -> TradeoffRow:
    """Frame rate, accumulated read noise and data rate at a fixed exposure.

    An ``nbits`` frame integrates as long as ``2**nbits - 1`` one-bit frames, so
    ``fps = round(base_fps_1bit / (2**nbits - 1))`` (half rounds up).
    """
    if nbits < 1:
        raise ValueError(f"nbits must be >= 1, got {nbits}")
    if not base_fps_1bit > 0:
        raise ValueError(f"base_fps_1bit must be > 0, got {base_fps_1bit}")
    fps = int(math.floor(base_fps_1bit / ((1 << nbits) - 1) + 0.5))
    if fps < 1:
        raise ValueError(f"{nbits}-bit frames at base rate {base_fps_1bit} give less than 1 fps")
    return TradeoffRow(
        nbits=nbits,
        fps=fps,
        read_noise_rate=fps * sigma_read,
        data_rate=nbits * fps * npixels / 1e6,
    )
