"""Correlation pyramid, radius-bounded lookup, and the relation map.

The volume's target-frame dims are average-pooled repeatedly; a lookup
reads, for one source point, a (2R+1)^2 neighborhood around its scaled
position on every level. Concatenating the lookups of all source points
yields the relation map: a per-point multi-scale motion-trend descriptor.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._backend import kernels
from .core import P2ITrackError
from .correlation import CorrelationVolume


class TooManyLevels(P2ITrackError):
    pass


class OutOfGrid(P2ITrackError):
    pass


@dataclass
class CorrelationPyramid:
    """Level 0 is the input volume; level s halves the target dims of
    level s-1 via 2x2 average pooling (edge-replicated when odd)."""

    levels: list[np.ndarray]

    @property
    def n_levels(self) -> int:
        return len(self.levels)

    @property
    def source_shape(self) -> tuple[int, int]:
        return self.levels[0].shape[0], self.levels[0].shape[1]


@dataclass
class RelationMap:
    """Per-point lookup vectors, shape (h, w, (S+1)(2R+1)^2).

    Channel layout is level-major, offsets row-major within a level.
    """

    data: np.ndarray
    n_levels: int
    radius: int

    @property
    def h(self) -> int:
        return self.data.shape[0]

    @property
    def w(self) -> int:
        return self.data.shape[1]

    @property
    def c(self) -> int:
        return self.data.shape[2]


def n_relation_channels(s_levels: int, radius: int) -> int:
    return (s_levels + 1) * (2 * radius + 1) ** 2


def build_pyramid(vol: CorrelationVolume, s_levels: int) -> CorrelationPyramid:
    """Pool the last two dims ``s_levels`` times; returns S+1 levels."""
    if s_levels < 0:
        raise ValueError(f"s_levels must be >= 0, got {s_levels}")
    if vol.h2 < (1 << s_levels) or vol.w2 < (1 << s_levels):
        raise TooManyLevels(
            f"target dims ({vol.h2}, {vol.w2}) cannot support {s_levels} poolings"
        )
    levels = [np.ascontiguousarray(vol.data)]
    for _ in range(s_levels):
        levels.append(kernels.avg_pool_last2(levels[-1]))
    return CorrelationPyramid(levels)


def lookup(pyr: CorrelationPyramid, x: tuple[float, float], radius: int) -> np.ndarray:
    """Multi-scale neighborhood read for one source point.

    ``x`` = (row, col) on the source grid, fractional allowed: the four
    surrounding source planes are blended bilinearly, which keeps the
    result continuous in ``x``. Each level s is sampled at
    x/2**s + (dy, dx) for all offsets with max(|dy|,|dx|) <= radius,
    border-clamped, offsets row-major, levels concatenated 0..S.
    """
    h1, w1 = pyr.source_shape
    y, x_ = float(x[0]), float(x[1])
    if not (0.0 <= y <= h1 - 1 and 0.0 <= x_ <= w1 - 1):
        raise OutOfGrid(f"point {x} outside source grid ({h1}, {w1})")

    i0 = min(int(np.floor(y)), h1 - 1)
    j0 = min(int(np.floor(x_)), w1 - 1)
    i1 = min(i0 + 1, h1 - 1)
    j1 = min(j0 + 1, w1 - 1)
    fy = y - i0
    fx = x_ - j0
    corner_w = {
        (i0, j0): (1 - fy) * (1 - fx),
        (i0, j1): (1 - fy) * fx,
        (i1, j0): fy * (1 - fx),
        (i1, j1): fy * fx,
    }

    side = 2 * radius + 1
    out = np.zeros(pyr.n_levels * side * side, dtype=np.float64)
    base = 0
    for s, vol in enumerate(pyr.levels):
        hs, ws = vol.shape[2], vol.shape[3]
        inv = 1.0 / (1 << s)
        offs = np.arange(-radius, radius + 1, dtype=np.float64)
        py = np.clip(y * inv + offs, 0.0, hs - 1.0)
        px = np.clip(x_ * inv + offs, 0.0, ws - 1.0)
        grid_y = np.repeat(py, side)
        grid_x = np.tile(px, side)
        block = np.zeros(side * side, dtype=np.float64)
        for (ii, jj), wgt in corner_w.items():
            if wgt == 0.0:
                continue
            plane = vol[ii, jj][:, :, None]
            block += wgt * kernels.bilinear_sample_hwc(plane, grid_y, grid_x)[:, 0]
        out[base : base + side * side] = block
        base += side * side
    return out


def build_relation_map(pyr: CorrelationPyramid, radius: int) -> RelationMap:
    """Lookup at every integer source point; the hot path of a frame pair."""
    if radius < 0:
        raise ValueError(f"radius must be >= 0, got {radius}")
    blocks = [
        kernels.lookup_level(vol, s, radius) for s, vol in enumerate(pyr.levels)
    ]
    data = np.concatenate(blocks, axis=2)
    return RelationMap(data, n_levels=pyr.n_levels - 1, radius=radius)
