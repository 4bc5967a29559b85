"""Bit depth versus frame rate, and the evaluation scores."""

import numpy as np

from quanta_video.metrics import LossWeights, bicubic_downsample, grad_l1, multiscale_loss, psnr, ssim
from quanta_video.sensor import tradeoff_row

# Same exposure per frame: an n-bit frame integrates as long as 2**n - 1 binary frames.
print("bits    fps  read noise e-/pix/s  Mb/s")
for n in (1, 3, 5, 7, 9):
    r = tradeoff_row(n)
    print(f"{r.nbits:4d} {r.fps:6d} {r.read_noise_rate:20.1f} {r.data_rate:6.2f}")

rng = np.random.default_rng(0)
gt = rng.random((64, 64))
noisy = np.clip(gt + rng.normal(0, 0.05, gt.shape), 0, 1)

print("PSNR", round(psnr(noisy, gt), 2), "SSIM", round(ssim(noisy, gt), 4))
print("gradient L1 of a constant offset is the offset:", grad_l1(gt, gt + 0.1))

# Multi-scale loss: the half and quarter scale outputs are compared with
# antialiased bicubic reductions of the ground truth.
loss = multiscale_loss(gt, noisy, bicubic_downsample(noisy, 2), bicubic_downsample(noisy, 4), denoised=noisy)
print("loss", round(loss.total, 5), {k: round(v, 5) for k, v in loss.terms.items()}, LossWeights())
