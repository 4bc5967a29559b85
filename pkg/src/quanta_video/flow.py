"""Coarse-to-fine tile block matching (second pipeline stage).

A flow vector ``(dx, dy)`` for a reference tile says where the tile's content
sits in the alternate image: ``alt[y + dy, x + dx] ~ ref[y, x]``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class FlowParams:
    tile_size: int = 16
    search_radius: int = 4  # coarsest level
    refine_radius: int = 2  # every finer level
    levels: int = 3
    subpixel: bool = False

    def __post_init__(self):
        if self.tile_size < 4:
            raise ValueError(f"tile_size must be >= 4, got {self.tile_size}")
        if self.levels < 1:
            raise ValueError(f"levels must be >= 1, got {self.levels}")
        if self.search_radius < 0 or self.refine_radius < 0:
            raise ValueError("search radii must be >= 0")

    @property
    def envelope(self) -> float:
        """Largest displacement (finest-level pixels) the search can report."""
        top = self.levels - 1
        reach = self.search_radius * 2**top + sum(self.refine_radius * 2**k for k in range(top))
        return reach + (0.5 if self.subpixel else 0.0)


@dataclass
class FlowField:
    """Tile grid of displacements, ``vectors[ty, tx] = (dx, dy)``."""

    vectors: np.ndarray
    tile_size: int

    @property
    def grid_shape(self) -> tuple[int, int]:
        return self.vectors.shape[:2]

    @property
    def dx(self) -> np.ndarray:
        return self.vectors[..., 0]

    @property
    def dy(self) -> np.ndarray:
        return self.vectors[..., 1]

    @classmethod
    def zeros(cls, grid_shape, tile_size: int) -> "FlowField":
        return cls(np.zeros((*grid_shape, 2)), tile_size)


def tile_grid(shape, tile_size: int) -> tuple[int, int]:
    return -(-shape[0] // tile_size), -(-shape[1] // tile_size)


def downsample2(image: np.ndarray) -> np.ndarray:
    """2x2 box filter with stride 2; odd sizes get their last row/column replicated."""
    img = np.asarray(image, dtype=np.float64)
    h, w = img.shape
    img = np.pad(img, ((0, h % 2), (0, w % 2)), mode="edge")
    return 0.25 * (img[0::2, 0::2] + img[1::2, 0::2] + img[0::2, 1::2] + img[1::2, 1::2])


def build_pyramid(image, levels: int, min_size: int = 1) -> list[np.ndarray]:
    """Images from finest (level 0) to coarsest; raises if the coarsest is below ``min_size``."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2 or img.size == 0:
        raise ValueError("image must be a non-empty 2-D array")
    if levels < 1:
        raise ValueError(f"levels must be >= 1, got {levels}")
    pyramid = [img]
    for _ in range(levels - 1):
        pyramid.append(downsample2(pyramid[-1]))
    if min(pyramid[-1].shape) < min_size:
        raise ValueError(
            f"{levels} levels shrink a {img.shape} image to {pyramid[-1].shape}, below {min_size}"
        )
    return pyramid


def upsample_flow(flow: FlowField, factor: int = 2) -> FlowField:
    """Nearest-tile replication; displacements scale by ``factor``."""
    if factor < 1:
        raise ValueError(f"factor must be >= 1, got {factor}")
    v = np.repeat(np.repeat(flow.vectors, factor, axis=0), factor, axis=1)
    return FlowField(v * factor, flow.tile_size)


def _tie_key(dx: np.ndarray, dy: np.ndarray, bound: int) -> np.ndarray:
    # order: squared magnitude, then dx, then dy
    span = 2 * bound + 1
    return ((dx * dx + dy * dy) * span + (dx + bound)) * span + (dy + bound)


def _match_level(ref, alt, centers, tile, radius, subpixel):
    """Exhaustive MAD search of ``±radius`` around integer ``centers`` for every tile.

    Returns float displacements of shape ``(ny, nx, 2)``.
    """
    h, w = ref.shape
    ny, nx = centers.shape[:2]
    span = 2 * radius + 1
    # reference tiles with validity mask for partial tiles at the image border
    ys = np.arange(ny * tile)
    xs = np.arange(nx * tile)
    valid = (ys[:, None] < h) & (xs[None, :] < w)
    ref_p = ref[np.minimum(ys, h - 1)[:, None], np.minimum(xs, w - 1)[None, :]]
    ref_t = ref_p.reshape(ny, tile, nx, tile).transpose(0, 2, 1, 3)
    mask_t = valid.reshape(ny, tile, nx, tile).transpose(0, 2, 1, 3).astype(np.float64)
    count = mask_t.sum(axis=(2, 3))

    cx = centers[..., 0].astype(np.int64)
    cy = centers[..., 1].astype(np.int64)
    ty, tx = np.meshgrid(np.arange(ny), np.arange(nx), indexing="ij")
    win = np.arange(tile + 2 * radius) - radius
    rows = ty[..., None] * tile + cy[..., None] + win  # (ny, nx, T + 2r)
    cols = tx[..., None] * tile + cx[..., None] + win
    rows = np.clip(rows, 0, h - 1)
    cols = np.clip(cols, 0, w - 1)
    alt_w = alt[rows[:, :, :, None], cols[:, :, None, :]]  # (ny, nx, T+2r, T+2r)

    costs = np.empty((ny, nx, span, span))
    for iy in range(span):
        for ix in range(span):
            diff = np.abs(alt_w[:, :, iy : iy + tile, ix : ix + tile] - ref_t)
            costs[:, :, iy, ix] = (diff * mask_t).sum(axis=(2, 3)) / count

    off = np.arange(span) - radius
    dxs = cx[..., None, None] + off[None, None, None, :]
    dys = cy[..., None, None] + off[None, None, :, None]
    bound = int(max(np.abs(dxs).max(), np.abs(dys).max()))
    key = _tie_key(dxs, dys, bound)
    flat_cost = costs.reshape(ny, nx, -1)
    best = flat_cost.min(axis=2, keepdims=True)
    key = np.where(flat_cost == best, key.reshape(ny, nx, -1), np.iinfo(np.int64).max)
    arg = key.argmin(axis=2)
    iy, ix = np.divmod(arg, span)
    result = np.stack([cx + ix - radius, cy + iy - radius], axis=-1).astype(np.float64)
    if subpixel:
        for axis, (i_main, i_other) in enumerate(((ix, iy), (iy, ix))):
            ok = (i_main > 0) & (i_main < span - 1)
            lo_i = np.clip(i_main - 1, 0, span - 1)
            hi_i = np.clip(i_main + 1, 0, span - 1)
            if axis == 0:
                c_lo = np.take_along_axis(flat_cost, (i_other * span + lo_i)[..., None], 2)[..., 0]
                c_hi = np.take_along_axis(flat_cost, (i_other * span + hi_i)[..., None], 2)[..., 0]
            else:
                c_lo = np.take_along_axis(flat_cost, (lo_i * span + i_other)[..., None], 2)[..., 0]
                c_hi = np.take_along_axis(flat_cost, (hi_i * span + i_other)[..., None], 2)[..., 0]
            c0 = best[..., 0]
            denom = c_lo - 2.0 * c0 + c_hi
            ok &= denom > 0
            shift = np.where(ok, 0.5 * (c_lo - c_hi) / np.where(ok, denom, 1.0), 0.0)
            result[..., axis] += np.clip(shift, -0.5, 0.5)
    return result


def estimate_flow(ref, alt, params: FlowParams = FlowParams()) -> FlowField:
    """Tile flow from ``ref`` to ``alt`` by coarse-to-fine block matching."""
    ref = np.asarray(ref, dtype=np.float64)
    alt = np.asarray(alt, dtype=np.float64)
    if ref.shape != alt.shape:
        raise ValueError(f"dimension mismatch: {ref.shape} vs {alt.shape}")
    T = params.tile_size
    pyr_ref = build_pyramid(ref, params.levels, min_size=T)
    pyr_alt = build_pyramid(alt, params.levels, min_size=T)
    top = params.levels - 1
    grid = tile_grid(pyr_ref[top].shape, T)
    centers = np.zeros((*grid, 2))
    for level in range(top, -1, -1):
        finest = level == 0
        radius = params.search_radius if level == top else params.refine_radius
        vec = _match_level(
            pyr_ref[level], pyr_alt[level], centers, T, radius, params.subpixel and finest
        )
        if not finest:
            up = upsample_flow(FlowField(vec, T)).vectors
            gy, gx = tile_grid(pyr_ref[level - 1].shape, T)
            centers = up[:gy, :gx]
    return FlowField(vec, T)


def consistency_mask(fwd: FlowField, bwd: FlowField, tau: float) -> np.ndarray:
    """Forward-backward check per tile.

    The backward flow is read at the tile nearest to where the forward vector
    lands (tile centres, clamped to the grid); a tile passes when
    ``|fwd + bwd| <= tau``.
    """
    if fwd.vectors.shape != bwd.vectors.shape:
        raise ValueError("flow grids must match")
    T = fwd.tile_size
    ny, nx = fwd.grid_shape
    ty, tx = np.meshgrid(np.arange(ny), np.arange(nx), indexing="ij")
    px = (tx + 0.5) * T + fwd.dx
    py = (ty + 0.5) * T + fwd.dy
    jx = np.clip(np.floor(px / T).astype(np.int64), 0, nx - 1)
    jy = np.clip(np.floor(py / T).astype(np.int64), 0, ny - 1)
    residual = fwd.vectors + bwd.vectors[jy, jx]
    return np.hypot(residual[..., 0], residual[..., 1]) <= tau


def expand_tiles(values: np.ndarray, tile_size: int, shape) -> np.ndarray:
    """Per-pixel map of a per-tile array (each pixel takes its containing tile's value)."""
    h, w = shape
    ty = np.minimum(np.arange(h) // tile_size, values.shape[0] - 1)
    tx = np.minimum(np.arange(w) // tile_size, values.shape[1] - 1)
    return values[ty[:, None], tx[None, :]]
