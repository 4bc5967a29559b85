"""Quanta video restoration: sensor simulation, QVS streams, align-and-merge restorer, metrics."""

__version__ = "0.1.0"

from .flow import FlowField, FlowParams, consistency_mask, estimate_flow
from .fuse import RestoredFrame, RestoreParams, Restorer, merge, refine, restore_frame, warp_bilinear
from .metrics import LossWeights, MetricsReport, bicubic_downsample, multiscale_loss, psnr, ssim
from .prefilter import SumImage, denoise_stabilized, generalized_anscombe, inverse_anscombe, predenoise, sum_window
from .quanta_io import StreamHeader, load_stream, parse_manifest, read_stream, save_stream, write_stream
from .sensor import (
    ResponseTable,
    SaturationError,
    SensorConfig,
    expected_readout,
    invert_response,
    ppp_to_exposure,
    readout_variance,
    simulate_frame,
    simulate_sequence,
    tradeoff_row,
)
