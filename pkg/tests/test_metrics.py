import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.lib.stride_tricks import sliding_window_view

from quanta_video.metrics import (
    PSNR_CAP,
    FrameMetrics,
    LossWeights,
    MetricsReport,
    bicubic_downsample,
    grad_l1,
    multiscale_loss,
    psnr,
    psnr_with_flag,
    ssim,
    ssim_map,
)


def window_means(img, w2d):
    """Direct 2-D weighted window averages over every full 11x11 window."""
    return np.einsum("ijkl,kl->ij", sliding_window_view(img, w2d.shape), w2d)


def gauss2d():
    x = np.arange(11) - 5
    g = np.exp(-(x**2) / (2 * 1.5**2))
    w = np.outer(g, g)
    return w / w.sum()


images = st.integers(0, 10_000).map(lambda s: np.random.default_rng(s).random((16, 18)))


def test_psnr_examples():
    a = np.random.default_rng(0).random((20, 20))
    assert psnr_with_flag(a, a) == (PSNR_CAP, True)
    assert round(psnr(a, a + 0.1), 3) == 20.0
    b = np.random.default_rng(1).random((20, 20))
    mse = ((a - b) ** 2).mean()
    assert psnr(a, b) == pytest.approx(10 * math.log10(1 / mse), abs=1e-9)
    assert psnr(2 * a, 2 * b, peak=2.0) == pytest.approx(psnr(a, b), abs=1e-9)
    with pytest.raises(ValueError):
        psnr(a, b[:5])


@given(images, images)
def test_psnr_symmetric(a, b):
    assert psnr(a, b) == psnr(b, a)


def test_ssim_identity():
    a = np.random.default_rng(2).random((32, 32))
    assert abs(ssim(a, a) - 1.0) < 1e-9
    with pytest.raises(ValueError):
        ssim(np.zeros((10, 20)), np.zeros((10, 20)))


def test_ssim_anticorrelated_negative():
    yy, xx = np.mgrid[0:32, 0:32]
    a = 0.5 + 0.3 * np.sign(np.sin(xx / 2.0) * np.sin(yy / 3.0))
    assert ssim(a, 1 - a) < 0


def test_ssim_offset_is_luminance_only():
    a = 0.2 + 0.6 * np.random.default_rng(3).random((30, 30))
    b = a + 0.05
    mu_a = window_means(a, gauss2d())
    mu_b = mu_a + 0.05
    c1 = 0.01**2
    predicted = np.mean((2 * mu_a * mu_b + c1) / (mu_a**2 + mu_b**2 + c1))
    assert ssim(a, b) == pytest.approx(predicted, abs=1e-6)


def test_ssim_map_matches_direct_windows():
    g = np.random.default_rng(4)
    a, b = g.random((24, 26)), g.random((24, 26))
    w = gauss2d()
    mu_a, mu_b = window_means(a, w), window_means(b, w)
    va = window_means(a * a, w) - mu_a**2
    vb = window_means(b * b, w) - mu_b**2
    cov = window_means(a * b, w) - mu_a * mu_b
    c1, c2 = 0.01**2, 0.03**2
    direct = (2 * mu_a * mu_b + c1) * (2 * cov + c2) / ((mu_a**2 + mu_b**2 + c1) * (va + vb + c2))
    assert np.allclose(ssim_map(a, b), direct, atol=1e-12)


@settings(max_examples=20)
@given(images, images)
def test_ssim_symmetric(a, b):
    assert abs(ssim(a, b) - ssim(b, a)) < 1e-9


def test_grad_l1_examples():
    a = np.zeros((2, 2))
    b = np.array([[1.0, 0.0], [0.0, 0.0]])
    assert grad_l1(a, b) == pytest.approx(1.25)
    assert grad_l1(a, a) == 0
    r = np.random.default_rng(5).random((9, 7))
    assert grad_l1(r, r - 0.3) == pytest.approx(0.3)


@given(images, images, images)
def test_grad_l1_triangle(a, b, c):
    assert grad_l1(a, c) <= grad_l1(a, b) + grad_l1(b, c) + 1e-9


def test_bicubic_downsample():
    assert bicubic_downsample(np.full((13, 10), 0.7), 2).shape == (7, 5)
    assert np.allclose(bicubic_downsample(np.full((13, 10), 0.7), 4), 0.7)
    img = np.random.default_rng(6).random((8, 8))
    assert np.array_equal(bicubic_downsample(img, 1), img)
    # a symmetric, normalized kernel reproduces linear ramps away from the edges
    ramp = np.tile(np.arange(64.0), (64, 1))
    out = bicubic_downsample(ramp, 2)
    centers = (np.arange(32) + 0.5) * 2 - 0.5
    assert np.allclose(out[:, 4:-4], centers[4:-4])
    with pytest.raises(ValueError):
        bicubic_downsample(img, 0)


def test_multiscale_loss_examples():
    gt = np.random.default_rng(7).random((32, 32))
    s2, s4 = bicubic_downsample(gt, 2), bicubic_downsample(gt, 4)
    assert multiscale_loss(gt, gt, s2, s4, gt).total == 0
    only2 = LossWeights(0.0, 1.0, 0.0, 0.0)
    assert multiscale_loss(gt, gt + 0.1, weights=only2).total == pytest.approx(0.1)


def test_multiscale_loss_default_assembly():
    g = np.random.default_rng(8)
    gt = g.random((32, 32))
    den, o1 = g.random((32, 32)), g.random((32, 32))
    o2, o4 = g.random((16, 16)), g.random((8, 8))
    loss = multiscale_loss(gt, o1, o2, o4, den)
    hand = (
        0.2 * grad_l1(gt, den)
        + 0.85 * grad_l1(gt, o1)
        + 0.1 * grad_l1(bicubic_downsample(gt, 2), o2)
        + 0.05 * grad_l1(bicubic_downsample(gt, 4), o4)
    )
    assert abs(loss.total - hand) < 1e-9
    assert float(loss) == loss.total and loss.missing == []
    partial = multiscale_loss(gt, o1)
    assert partial.missing == ["denoised", "s2", "s4"]


@given(st.floats(0, 5), st.integers(0, 3))
def test_multiscale_loss_linear_in_each_weight(scale, which):
    g = np.random.default_rng(9)
    gt = g.random((16, 16))
    args = (gt, g.random((16, 16)), g.random((8, 8)), g.random((4, 4)), g.random((16, 16)))
    base = [0.2, 0.85, 0.1, 0.05]
    scaled = list(base)
    scaled[which] *= scale
    unit = [0.0] * 4
    unit[which] = base[which]
    full = multiscale_loss(*args, weights=LossWeights(*base)).total
    part = multiscale_loss(*args, weights=LossWeights(*unit)).total
    got = multiscale_loss(*args, weights=LossWeights(*scaled)).total
    assert got == pytest.approx(full - part + scale * part, abs=1e-9)


def test_report_csv_round_trip():
    rep = MetricsReport()
    rep.add(FrameMetrics(0, 20.0, 0.5, 0.1))
    rep.add(FrameMetrics(1, 22.0, 0.7, None))
    rep.add(FrameMetrics(2, 99.0, 1.0, 0.0, exact=True))
    text = rep.to_csv()
    lines = text.splitlines()
    assert lines[0] == "frame,psnr_db,ssim,msloss,exact"
    assert lines[-2].startswith("mean,47.000000,0.733333,0.050000")
    back = MetricsReport.from_csv(text)
    assert [r.frame for r in back.records] == [0, 1, 2]
    assert back.records[1].loss is None and back.records[2].exact
    agg = back.aggregate()
    assert agg["psnr"][0] == pytest.approx(np.mean([20, 22, 99]))
    assert agg["psnr"][1] == pytest.approx(np.std([20, 22, 99]))
    with pytest.raises(ValueError):
        MetricsReport.from_csv("a,b\n")
