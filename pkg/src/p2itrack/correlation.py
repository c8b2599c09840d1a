"""Global dense 4D correlation volume between consecutive feature maps."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from ._backend import kernels
from .core import BBox, FeatureMap, P2ITrackError, grid_box


class ChannelMismatch(P2ITrackError):
    pass


class DimMismatch(P2ITrackError):
    pass


class Scale(enum.Enum):
    """Post-scaling of the raw dot products.

    RAW keeps the plain sums; INV_SQRT_D divides by sqrt(d), which keeps
    the score range stable across descriptor widths.
    """

    RAW = "raw"
    INV_SQRT_D = "inv_sqrt_d"


@dataclass
class CorrelationVolume:
    """Pairwise relation scores c[i, j, k, l] between grid points of two
    frames; (i, j) indexes the earlier frame, (k, l) the later one."""

    data: np.ndarray  # shape (h1, w1, h2, w2)

    @property
    def h1(self) -> int:
        return self.data.shape[0]

    @property
    def w1(self) -> int:
        return self.data.shape[1]

    @property
    def h2(self) -> int:
        return self.data.shape[2]

    @property
    def w2(self) -> int:
        return self.data.shape[3]


def build_volume(
    f_prev: FeatureMap, f_cur: FeatureMap, scale: Scale = Scale.INV_SQRT_D
) -> CorrelationVolume:
    """Dot product of every (i, j) descriptor in ``f_prev`` with every
    (k, l) descriptor in ``f_cur``."""
    if f_prev.d != f_cur.d:
        raise ChannelMismatch(
            f"feature dims differ: {f_prev.d} vs {f_cur.d}"
        )
    a = np.ascontiguousarray(f_prev.data)
    b = np.ascontiguousarray(f_cur.data)
    vol = kernels.corr_volume(a, b)
    if scale is Scale.INV_SQRT_D:
        vol = (vol / np.sqrt(f_prev.d)).astype(vol.dtype, copy=False)
    return CorrelationVolume(vol)


@dataclass
class BackgroundMask:
    """Foreground indicator grids for the two frames of a volume.

    A cell is foreground iff its unit square [i, i+1) x [j, j+1) in grid
    coordinates intersects at least one grid-mapped box.
    """

    prev: np.ndarray  # (h1, w1) bool
    cur: np.ndarray   # (h2, w2) bool

    @classmethod
    def from_boxes(
        cls,
        prev_boxes: list[BBox],
        cur_boxes: list[BBox],
        shape_prev: tuple[int, int],
        shape_cur: tuple[int, int],
        stride: int,
    ) -> "BackgroundMask":
        return cls(
            _rasterize(prev_boxes, shape_prev, stride),
            _rasterize(cur_boxes, shape_cur, stride),
        )


def _rasterize(boxes: list[BBox], shape: tuple[int, int], stride: int) -> np.ndarray:
    mask = np.zeros(shape, dtype=bool)
    h, w = shape
    for box in boxes:
        g = grid_box(box, stride)
        r0 = max(0, int(np.floor(g.y)))
        r1 = min(h, int(np.ceil(g.bottom())))
        c0 = max(0, int(np.floor(g.x)))
        c1 = min(w, int(np.ceil(g.right())))
        if r1 > r0 and c1 > c0:
            mask[r0:r1, c0:c1] = True
    return mask


def apply_mask(
    vol: CorrelationVolume, mask: BackgroundMask, fill: float | None = None
) -> CorrelationVolume:
    """Replace every entry with a background endpoint by ``fill``.

    The default fill is the volume minimum, so masked entries can never
    win a maximum over relations.
    """
    if mask.prev.shape != (vol.h1, vol.w1) or mask.cur.shape != (vol.h2, vol.w2):
        raise DimMismatch(
            f"mask shapes {mask.prev.shape}/{mask.cur.shape} do not match "
            f"volume dims ({vol.h1},{vol.w1})/({vol.h2},{vol.w2})"
        )
    if fill is None:
        fill = float(vol.data.min())
    keep = mask.prev[:, :, None, None] & mask.cur[None, None, :, :]
    out = np.where(keep, vol.data, np.asarray(fill, dtype=vol.data.dtype))
    return CorrelationVolume(out.astype(vol.data.dtype, copy=False))
