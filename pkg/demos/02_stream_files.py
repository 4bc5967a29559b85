"""Writing and reading bit-packed QVS streams."""

import tempfile
from pathlib import Path

import numpy as np

from quanta_video import quanta_io as qio
from quanta_video.sensor import SensorConfig, scale_luminance, simulate_sequence
from quanta_video.synthetic import translating_clip

cfg = SensorConfig()
clip = translating_clip(8, 64, 96, velocity=(3, 0), seed=4)
frames = simulate_sequence(scale_luminance(clip, 3.25), cfg, seed=4)

header = qio.StreamHeader(width=96, height=64, nbits=cfg.nbits, frame_count=len(frames), fps=cfg.fps, nominal_ppp=3.25)
data = qio.write_stream(frames, header)
print(f"{len(frames)} frames, {len(data)} bytes ({header.frame_bytes} per frame, header {qio.HEADER_SIZE})")
print("uint16 in memory would take", frames.astype(np.uint16).nbytes, "bytes")

# Pixels are packed least-significant bit first.
print("values [1, 7, 0, 5] pack to", qio.pack_frame(np.array([1, 7, 0, 5]), 3).hex())

with tempfile.TemporaryDirectory() as tmp:
    path = Path(tmp) / "clip.qvs"
    qio.save_stream(path, frames, header)
    back_header, back = qio.load_stream(path)
    print("round trip exact:", back_header == header and np.array_equal(back, frames))
    print("frame 5 by random access matches:", np.array_equal(qio.read_frame(path.read_bytes(), 5), frames[5]))

# Corrupt input raises a specific error.
try:
    qio.read_stream(data[:-3])
except qio.TruncatedStreamError as exc:
    print("truncated:", exc)
