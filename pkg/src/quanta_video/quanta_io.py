"""Persistence: QVS bit-packed quanta streams, grayscale images, dataset manifests.

QVS layout (little-endian, no padding between fields)::

    magic        4s   b"QVS1"
    width        u16
    height       u16
    nbits        u8
    frame_count  u32
    fps          f32
    nominal_ppp  f32

followed by ``frame_count`` frames. Each frame stores its pixels row-major,
``nbits`` bits per pixel, least-significant bit first, filling bytes from
bit 0 upwards. Every frame starts on a byte boundary.
"""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

MAGIC = b"QVS1"
_HEADER = struct.Struct("<4sHHBIff")
HEADER_SIZE = _HEADER.size


class StreamError(ValueError):
    """Base class for QVS decoding/encoding failures."""


class BadMagicError(StreamError):
    pass


class TruncatedStreamError(StreamError):
    pass


class ValueOverflowError(StreamError):
    """A pixel value does not fit in the declared bit depth."""


class ImageFormatError(ValueError):
    pass


class ManifestError(ValueError):
    pass


@dataclass(frozen=True)
class StreamHeader:
    width: int
    height: int
    nbits: int
    frame_count: int
    fps: float
    nominal_ppp: float

    def __post_init__(self):
        # fps and ppp are stored as float32; keep the in-memory header equal to what is written
        object.__setattr__(self, "fps", float(np.float32(self.fps)))
        object.__setattr__(self, "nominal_ppp", float(np.float32(self.nominal_ppp)))
        if not 1 <= self.nbits <= 16:
            raise StreamError(f"nbits must be in [1, 16], got {self.nbits}")
        if self.width <= 0 or self.height <= 0:
            raise StreamError("width and height must be positive")
        if self.width > 0xFFFF or self.height > 0xFFFF:
            raise StreamError("width and height must fit in 16 bits")

    @property
    def frame_bytes(self) -> int:
        return (self.width * self.height * self.nbits + 7) // 8

    def pack(self) -> bytes:
        return _HEADER.pack(
            MAGIC, self.width, self.height, self.nbits, self.frame_count, self.fps, self.nominal_ppp
        )

    @classmethod
    def unpack(cls, data: bytes) -> "StreamHeader":
        if len(data) < HEADER_SIZE:
            raise TruncatedStreamError(f"need {HEADER_SIZE} header bytes, got {len(data)}")
        magic, w, h, nbits, count, fps, ppp = _HEADER.unpack_from(data)
        if magic != MAGIC:
            raise BadMagicError(f"bad magic {magic!r}")
        return cls(w, h, nbits, count, fps, ppp)


def pack_frame(frame: np.ndarray, nbits: int) -> bytes:
    values = np.asarray(frame).ravel()
    if values.size and (values.min() < 0 or int(values.max()) >= 1 << nbits):
        raise ValueOverflowError(f"frame values must lie in [0, {(1 << nbits) - 1}]")
    v = values.astype(np.uint32)
    bits = ((v[:, None] >> np.arange(nbits, dtype=np.uint32)) & 1).astype(np.uint8)
    return np.packbits(bits.ravel(), bitorder="little").tobytes()


def unpack_frame(data: bytes, width: int, height: int, nbits: int) -> np.ndarray:
    n = width * height
    bits = np.unpackbits(np.frombuffer(data, dtype=np.uint8), bitorder="little")[: n * nbits]
    weights = (1 << np.arange(nbits, dtype=np.uint32)).astype(np.uint32)
    values = bits.reshape(n, nbits).astype(np.uint32) @ weights
    return values.reshape(height, width).astype(np.uint16)


def write_stream(frames, header: StreamHeader) -> bytes:
    """Serialize frames; ``header.frame_count`` must match ``len(frames)``."""
    frames = list(frames)
    if header.frame_count != len(frames):
        raise StreamError(f"header declares {header.frame_count} frames, got {len(frames)}")
    out = [header.pack()]
    for i, f in enumerate(frames):
        f = np.asarray(f)
        if f.shape != (header.height, header.width):
            raise StreamError(f"frame {i} has shape {f.shape}, header says {(header.height, header.width)}")
        out.append(pack_frame(f, header.nbits))
    return b"".join(out)


def read_stream(data: bytes) -> tuple[StreamHeader, np.ndarray]:
    """Decode a QVS byte string into its header and a ``(frames, height, width)`` uint16 array."""
    header = StreamHeader.unpack(data)
    fb = header.frame_bytes
    need = HEADER_SIZE + fb * header.frame_count
    if len(data) < need:
        raise TruncatedStreamError(f"payload truncated: need {need} bytes, got {len(data)}")
    frames = np.empty((header.frame_count, header.height, header.width), dtype=np.uint16)
    for i in range(header.frame_count):
        start = HEADER_SIZE + i * fb
        frames[i] = unpack_frame(data[start : start + fb], header.width, header.height, header.nbits)
    return header, frames


def read_frame(data: bytes, index: int) -> np.ndarray:
    """Random access to a single frame without decoding the rest."""
    header = StreamHeader.unpack(data)
    if not 0 <= index < header.frame_count:
        raise IndexError(index)
    fb = header.frame_bytes
    start = HEADER_SIZE + index * fb
    chunk = data[start : start + fb]
    if len(chunk) < fb:
        raise TruncatedStreamError(f"frame {index} truncated")
    return unpack_frame(chunk, header.width, header.height, header.nbits)


def save_stream(path, frames, header: StreamHeader) -> None:
    Path(path).write_bytes(write_stream(frames, header))


def load_stream(path) -> tuple[StreamHeader, np.ndarray]:
    return read_stream(Path(path).read_bytes())


# -- grayscale images -------------------------------------------------------

def read_groundtruth(path) -> np.ndarray:
    """Load an 8- or 16-bit grayscale PGM/PNG as float64 in [0, 1]."""
    path = Path(path)
    try:
        with Image.open(path) as im:
            mode = im.mode
            arr = np.array(im)
    except FileNotFoundError:
        raise
    except OSError as exc:
        raise ImageFormatError(f"cannot read {path}: {exc}") from exc
    # Pillow already rescales PGM files with a non-default maxval to full range
    if mode == "L":
        return arr.astype(np.float64) / 255.0
    if mode in ("I;16", "I;16B", "I;16L", "I"):
        if arr.min() < 0 or arr.max() > 65535:
            raise ImageFormatError(f"{path}: values outside 16-bit range")
        return arr.astype(np.float64) / 65535.0
    raise ImageFormatError(f"{path}: unsupported image mode {mode!r} (grayscale 8/16-bit only)")


def write_linear16(image, path) -> None:
    """Save a [0, 1] image losslessly enough for evaluation as 16-bit grayscale."""
    x = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    Image.fromarray(np.round(x * 65535.0).astype(np.uint16)).save(path)


def export_display(image, path, gamma: float = 2.2) -> np.ndarray:
    """Write an 8-bit display image: clamp to [0, 1], apply ``x ** (1/gamma)``."""
    x = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0) ** (1.0 / gamma)
    out = np.round(x * 255.0).astype(np.uint8)
    Image.fromarray(out).save(path)
    return out


# -- manifests ---------------------------------------------------------------

@dataclass(frozen=True)
class ClipRecord:
    path: str
    fps: float
    ppp: float
    gt: str
    line: int = 0


@dataclass
class DatasetManifest:
    clips: list[ClipRecord] = field(default_factory=list)

    def __len__(self):
        return len(self.clips)

    def __iter__(self):
        return iter(self.clips)


def parse_key_values(text: str) -> list[tuple[int, dict[str, tuple[int, str]]]]:
    """Split ``key=value`` text into blank-line-separated blocks.

    Lines starting with ``#`` are comments. Returns ``(first_line, {key: (line, value)})``
    per block, line numbers 1-based.
    """
    blocks = []
    current: dict[str, tuple[int, str]] = {}
    start = 0
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if line.startswith("#"):
            continue
        if not line:
            if current:
                blocks.append((start, current))
                current = {}
            continue
        if "=" not in line:
            raise ManifestError(f"line {lineno}: expected key=value, got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not current:
            start = lineno
        current[key] = (lineno, value)
    if current:
        blocks.append((start, current))
    return blocks


_MANIFEST_KEYS = ("path", "fps", "ppp", "gt")


def parse_manifest(text: str) -> DatasetManifest:
    """Parse clip records (keys ``path``, ``fps``, ``ppp``, ``gt``)."""
    manifest = DatasetManifest()
    for n, (start, block) in enumerate(parse_key_values(text), 1):
        missing = [k for k in _MANIFEST_KEYS if k not in block]
        if missing:
            raise ManifestError(f"record {n} (line {start}): missing required key(s) {', '.join(missing)}")
        for key in block:
            if key not in _MANIFEST_KEYS:
                warnings.warn(f"line {block[key][0]}: ignoring unknown key {key!r}", stacklevel=2)
        try:
            fps = float(block["fps"][1])
            ppp = float(block["ppp"][1])
        except ValueError as exc:
            raise ManifestError(f"record {n} (line {start}): {exc}") from exc
        if not block["path"][1] or not block["gt"][1]:
            raise ManifestError(f"record {n} (line {start}): empty path")
        if not fps > 0:
            raise ManifestError(f"line {block['fps'][0]}: fps must be > 0")
        if ppp < 0:
            raise ManifestError(f"line {block['ppp'][0]}: ppp must be >= 0")
        manifest.clips.append(ClipRecord(block["path"][1], fps, ppp, block["gt"][1], start))
    return manifest
