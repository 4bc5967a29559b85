"""Image quality metrics and the multi-scale gradient L1 loss used as a score."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

PSNR_CAP = 99.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return a, b


def psnr_with_flag(a, b, peak: float = 1.0) -> tuple[float, bool]:
    """PSNR in dB and whether the images match exactly (then the value is capped at 99)."""
    if peak <= 0:
        raise ValueError("peak must be > 0")
    a, b = _pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0:
        return PSNR_CAP, True
    return min(10.0 * math.log10(peak * peak / mse), PSNR_CAP), False


def psnr(a, b, peak: float = 1.0) -> float:
    return psnr_with_flag(a, b, peak)[0]


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2
    g = np.exp(-(x**2) / (2 * sigma**2))
    return g / g.sum()


def ssim_map(a, b, data_range: float = 1.0) -> np.ndarray:
    """Per-pixel SSIM over the region where the full 11x11 window fits."""
    a, b = _pair(a, b)
    if a.ndim != 2 or min(a.shape) < SSIM_WINDOW:
        raise ValueError(f"images must be at least {SSIM_WINDOW}x{SSIM_WINDOW}")
    g = gaussian_window()
    r = SSIM_WINDOW // 2

    def filt(x):
        y = ndimage.correlate1d(x, g, axis=0, mode="constant")
        y = ndimage.correlate1d(y, g, axis=1, mode="constant")
        return y[r:-r, r:-r]

    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    mu_a, mu_b = filt(a), filt(b)
    var_a = filt(a * a) - mu_a**2
    var_b = filt(b * b) - mu_b**2
    cov = filt(a * b) - mu_a * mu_b
    lum = (2 * mu_a * mu_b + c1) / (mu_a**2 + mu_b**2 + c1)
    cs = (2 * cov + c2) / (var_a + var_b + c2)
    return lum * cs


def ssim(a, b, data_range: float = 1.0) -> float:
    return float(np.mean(ssim_map(a, b, data_range)))


def grad_l1(a, b) -> float:
    """Mean absolute error plus mean absolute error of forward-difference gradients."""
    a, b = _pair(a, b)
    total = float(np.mean(np.abs(a - b)))
    if a.shape[1] > 1:
        total += float(np.mean(np.abs(np.diff(a, axis=1) - np.diff(b, axis=1))))
    if a.shape[0] > 1:
        total += float(np.mean(np.abs(np.diff(a, axis=0) - np.diff(b, axis=0))))
    return total


def _cubic(x: np.ndarray, a: float = -0.5) -> np.ndarray:
    x = np.abs(x)
    x2, x3 = x * x, x * x * x
    near = (a + 2) * x3 - (a + 3) * x2 + 1
    far = a * x3 - 5 * a * x2 + 8 * a * x - 4 * a
    return np.where(x <= 1, near, np.where(x < 2, far, 0.0))


def _resample_matrix(n_in: int, factor: int) -> np.ndarray:
    n_out = -(-n_in // factor)
    centers = (np.arange(n_out) + 0.5) * factor - 0.5
    taps = np.arange(-2 * factor, 2 * factor + 1)
    base = np.floor(centers).astype(np.int64)
    idx = base[:, None] + taps[None, :]
    wts = _cubic((idx - centers[:, None]) / factor)
    wts /= wts.sum(axis=1, keepdims=True)
    mat = np.zeros((n_out, n_in))
    rows = np.repeat(np.arange(n_out), taps.size)
    np.add.at(mat, (rows, np.clip(idx, 0, n_in - 1).ravel()), wts.ravel())
    return mat


def bicubic_downsample(image, factor: int) -> np.ndarray:
    """Antialiased Catmull-Rom downsampling by an integer factor, edges replicated.

    Output size is ``ceil(n / factor)`` per axis. ``factor == 1`` returns a copy.
    """
    img = np.asarray(image, dtype=np.float64)
    if factor < 1:
        raise ValueError("factor must be >= 1")
    if factor == 1:
        return img.copy()
    return _resample_matrix(img.shape[0], factor) @ img @ _resample_matrix(img.shape[1], factor).T


@dataclass(frozen=True)
class LossWeights:
    lambda1: float = 0.2
    lambda2: float = 0.85
    lambda3: float = 0.1
    lambda4: float = 0.05

    def __post_init__(self):
        if min(self.lambda1, self.lambda2, self.lambda3, self.lambda4) < 0:
            raise ValueError("loss weights must be >= 0")


@dataclass
class MultiscaleLoss:
    total: float
    terms: dict[str, float]
    missing: list[str]

    def __float__(self):
        return self.total


def multiscale_loss(
    gt,
    output_s1=None,
    output_s2=None,
    output_s4=None,
    denoised=None,
    weights: LossWeights = LossWeights(),
) -> MultiscaleLoss:
    """Weighted gradient-L1 over the denoised frame and the 1x, 2x, 4x outputs.

    Ground truth for the half and quarter scales is :func:`bicubic_downsample`
    of ``gt``. Missing inputs contribute nothing and are listed in ``missing``.
    """
    gt = np.asarray(gt, dtype=np.float64)
    refs = {"s1": gt, "s2": None, "s4": None}
    pairs = (
        ("denoised", weights.lambda1, "s1", denoised),
        ("s1", weights.lambda2, "s1", output_s1),
        ("s2", weights.lambda3, "s2", output_s2),
        ("s4", weights.lambda4, "s4", output_s4),
    )
    terms, missing = {}, []
    total = 0.0
    for name, lam, scale, out in pairs:
        if out is None:
            missing.append(name)
            continue
        if refs[scale] is None:
            refs[scale] = bicubic_downsample(gt, int(scale[1:]))
        term = grad_l1(refs[scale], out)
        terms[name] = term
        total += lam * term
    return MultiscaleLoss(total, terms, missing)


@dataclass
class FrameMetrics:
    frame: int
    psnr: float
    ssim: float
    loss: float | None = None
    exact: bool = False


@dataclass
class MetricsReport:
    records: list[FrameMetrics] = field(default_factory=list)

    COLUMNS = ("frame", "psnr_db", "ssim", "msloss", "exact")

    def add(self, record: FrameMetrics) -> None:
        self.records.append(record)

    def aggregate(self) -> dict[str, tuple[float, float]]:
        """``{metric: (mean, std)}`` over frames (population std)."""
        out = {}
        for key in ("psnr", "ssim", "loss"):
            vals = [getattr(r, key) for r in self.records if getattr(r, key) is not None]
            if vals:
                out[key] = (float(np.mean(vals)), float(np.std(vals)))
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.COLUMNS)
        for r in self.records:
            loss = "" if r.loss is None else f"{r.loss:.6f}"
            w.writerow([r.frame, f"{r.psnr:.6f}", f"{r.ssim:.6f}", loss, int(r.exact)])
        for stat, idx in (("mean", 0), ("std", 1)):
            agg = self.aggregate()
            row = [stat]
            for key in ("psnr", "ssim", "loss"):
                row.append(f"{agg[key][idx]:.6f}" if key in agg else "")
            row.append("")
            w.writerow(row)
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "MetricsReport":
        rows = list(csv.reader(io.StringIO(text)))
        if not rows or tuple(rows[0]) != cls.COLUMNS:
            raise ValueError("unexpected metrics header")
        report = cls()
        for row in rows[1:]:
            if row[0] in ("mean", "std"):
                continue
            report.add(
                FrameMetrics(
                    int(row[0]), float(row[1]), float(row[2]), float(row[3]) if row[3] else None, row[4] == "1"
                )
            )
        return report
