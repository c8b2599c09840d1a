"""Hierarchical relation aggregation: point -> part -> instance.

A tracklet's box pools the relation map into a v x v part grid
(RoIAlign, one bilinear sample per bin center); each candidate detection
contributes a v x v grid of part-centroid displacements. The two are
concatenated on the channel axis and scored by a small conv + MLP with a
sigmoid output, giving one tracklet-detection affinity in (0, 1).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._backend import kernels
from .core import BBox, Detection, P2ITrackError, Tracklet, grid_box
from .pyramid import RelationMap

P2IW_MAGIC = b"P2IW"
P2IW_VERSION = 1


class DegenerateBox(P2ITrackError):
    pass


class DimMismatch(P2ITrackError):
    pass


class BadMagic(P2ITrackError):
    pass


@dataclass
class PartRelation:
    """RoIAligned relation map for one box: (v, v, c)."""

    grid: np.ndarray


@dataclass
class PartOffsetGrid:
    """Displacements (dy, dx) between the centroids of corresponding
    parts of a detection box and a tracklet box: (v, v, 2), grid units."""

    grid: np.ndarray


@dataclass
class HeadParams:
    """Scoring-head weights.

    conv_w: (c_hid, c+2, v, v) full-extent kernel, valid padding, so one
    convolution collapses the part grid to a single hidden vector.
    The MLP is c_hid -> max(1, c_hid//2) -> 1 with ReLU between layers
    and a final sigmoid.
    """

    conv_w: np.ndarray
    conv_b: np.ndarray
    mlp1_w: np.ndarray
    mlp1_b: np.ndarray
    mlp2_w: np.ndarray
    mlp2_b: float

    def __post_init__(self):
        for arr in (self.conv_w, self.conv_b, self.mlp1_w, self.mlp1_b, self.mlp2_w):
            if not np.all(np.isfinite(arr)):
                raise ValueError("head parameters must be finite")

    @property
    def c_hid(self) -> int:
        return self.conv_w.shape[0]

    @property
    def c_in(self) -> int:
        return self.conv_w.shape[1] - 2

    @property
    def v(self) -> int:
        return self.conv_w.shape[2]

    def copy(self) -> "HeadParams":
        return HeadParams(
            self.conv_w.copy(), self.conv_b.copy(), self.mlp1_w.copy(),
            self.mlp1_b.copy(), self.mlp2_w.copy(), float(self.mlp2_b),
        )

    def as_flat(self) -> np.ndarray:
        return np.concatenate([
            self.conv_w.ravel(), self.conv_b.ravel(), self.mlp1_w.ravel(),
            self.mlp1_b.ravel(), self.mlp2_w.ravel(), [self.mlp2_b],
        ])


@dataclass
class AffinityMatrix:
    """Tracklet-detection relation scores, shape (n_dets, n_trks), all in (0, 1)."""

    scores: np.ndarray

    @property
    def n(self) -> int:
        return self.scores.shape[0]

    @property
    def m(self) -> int:
        return self.scores.shape[1]


def init_head_params(
    v: int, c: int, c_hid: int = 64, seed: int = 0
) -> HeadParams:
    """He-style random initialization, float64 throughout."""
    rng = np.random.default_rng(seed)
    h2 = max(1, c_hid // 2)
    fan_conv = (c + 2) * v * v
    return HeadParams(
        conv_w=rng.normal(0.0, np.sqrt(2.0 / fan_conv), (c_hid, c + 2, v, v)),
        conv_b=np.zeros(c_hid),
        mlp1_w=rng.normal(0.0, np.sqrt(2.0 / c_hid), (h2, c_hid)),
        mlp1_b=np.zeros(h2),
        mlp2_w=rng.normal(0.0, np.sqrt(2.0 / h2), h2),
        mlp2_b=0.0,
    )


def roi_align(rmap: RelationMap, box: BBox, v: int) -> PartRelation:
    """Pool a grid-coordinate box into v x v bins, one bilinear sample at
    each bin center. Cell values sit at integer grid coordinates; samples
    outside the grid clamp to the border. The box may be fractional and
    may overhang the grid."""
    if box.w <= 0 or box.h <= 0:
        raise DegenerateBox(f"box must have positive size, got {box}")
    ys = box.y + (np.arange(v) + 0.5) * box.h / v
    xs = box.x + (np.arange(v) + 0.5) * box.w / v
    grid_y = np.repeat(ys, v)
    grid_x = np.tile(xs, v)
    samples = kernels.bilinear_sample_hwc(rmap.data, grid_y, grid_x)
    return PartRelation(samples.reshape(v, v, rmap.c))


def offset_grid(det: BBox, trk: BBox, v: int) -> PartOffsetGrid:
    """Part-centroid displacements det - trk, (dy, dx) per part."""
    if det.w <= 0 or det.h <= 0 or trk.w <= 0 or trk.h <= 0:
        raise DegenerateBox("boxes must have positive size")
    out = np.zeros((v, v, 2), dtype=np.float64)
    for a in range(v):
        for b in range(v):
            dy = (det.y + (a + 0.5) * det.h / v) - (trk.y + (a + 0.5) * trk.h / v)
            dx = (det.x + (b + 0.5) * det.w / v) - (trk.x + (b + 0.5) * trk.w / v)
            out[a, b] = (dy, dx)
    return PartOffsetGrid(out)


def forward(params: HeadParams, x: np.ndarray, with_cache: bool = False):
    """Score a batch of concatenated part tensors.

    ``x``: (n, v, v, c+2) channels-last. Returns scores (n,) in (0, 1);
    with ``with_cache`` also the intermediate activations needed for the
    analytic backward pass.
    """
    if x.shape[1:] != (params.v, params.v, params.c_in + 2):
        raise DimMismatch(
            f"input shape {x.shape[1:]} does not match head "
            f"(v={params.v}, c={params.c_in})"
        )
    # (n, v, v, ch) x (o, ch, v, v) -> (n, o)
    z0 = np.tensordot(x, params.conv_w, axes=([1, 2, 3], [2, 3, 1])) + params.conv_b
    a0 = np.maximum(z0, 0.0)
    z1 = a0 @ params.mlp1_w.T + params.mlp1_b
    a1 = np.maximum(z1, 0.0)
    z2 = a1 @ params.mlp2_w + params.mlp2_b
    p = 1.0 / (1.0 + np.exp(-z2))
    if with_cache:
        return p, {"x": x, "z0": z0, "a0": a0, "z1": z1, "a1": a1, "p": p}
    return p


def score_pair(part: PartRelation, off: PartOffsetGrid, params: HeadParams) -> float:
    """Affinity of one tracklet-detection pair."""
    x = concat_inputs(part, off)
    return float(forward(params, x[None])[0])


def concat_inputs(part: PartRelation, off: PartOffsetGrid) -> np.ndarray:
    if part.grid.shape[:2] != off.grid.shape[:2]:
        raise DimMismatch(
            f"part grid {part.grid.shape} and offset grid {off.grid.shape} disagree"
        )
    return np.concatenate(
        [part.grid.astype(np.float64), off.grid.astype(np.float64)], axis=2
    )


def build_affinity(
    rmap: RelationMap,
    trks: list[Tracklet],
    dets: list[Detection],
    params: HeadParams,
    v: int,
    stride: int = 8,
) -> AffinityMatrix:
    """Score every detection against every tracklet.

    Tracklets are pooled once (their part relation does not depend on the
    detection); the offsets are per pair. Boxes arrive in image pixels
    and are mapped to grid coordinates here.
    """
    n, m = len(dets), len(trks)
    scores = np.zeros((n, m), dtype=np.float64)
    if n == 0 or m == 0:
        return AffinityMatrix(scores)
    trk_boxes = [grid_box(t.assoc_box if t.assoc_box is not None else t.last_box(), stride) for t in trks]
    det_boxes = [grid_box(d.box, stride) for d in dets]
    parts = [roi_align(rmap, b, v) for b in trk_boxes]
    xs = np.empty((n * m, v, v, rmap.c + 2), dtype=np.float64)
    k = 0
    for i in range(n):
        for j in range(m):
            off = offset_grid(det_boxes[i], trk_boxes[j], v)
            xs[k] = concat_inputs(parts[j], off)
            k += 1
    scores = forward(params, xs).reshape(n, m)
    return AffinityMatrix(scores)


def save_params(path: str | Path, params: HeadParams) -> None:
    """Write head weights in P2IW binary form.

    Layout: magic "P2IW", u32 version=1, u32 v, u32 c, u32 c_hid, then
    float32 LE blocks: conv weights (c_hid, c+2, v, v) C-order (output-
    major), conv bias, mlp1 weights (h2, c_hid) C-order, mlp1 bias,
    mlp2 weights, mlp2 bias.
    """
    header = P2IW_MAGIC + struct.pack(
        "<IIII", P2IW_VERSION, params.v, params.c_in, params.c_hid
    )
    with open(path, "wb") as f:
        f.write(header)
        for arr in (
            params.conv_w, params.conv_b, params.mlp1_w, params.mlp1_b,
            params.mlp2_w, np.asarray([params.mlp2_b]),
        ):
            f.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_params(path: str | Path) -> HeadParams:
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 20 or raw[:4] != P2IW_MAGIC:
        raise BadMagic(f"{path}: not a P2IW file")
    version, v, c, c_hid = struct.unpack("<IIII", raw[4:20])
    if version != P2IW_VERSION:
        raise BadMagic(f"{path}: unsupported P2IW version {version}")
    h2 = max(1, c_hid // 2)
    sizes = [c_hid * (c + 2) * v * v, c_hid, h2 * c_hid, h2, h2, 1]
    expected = 20 + 4 * sum(sizes)
    if len(raw) != expected:
        raise DimMismatch(f"{path}: expected {expected} bytes, got {len(raw)}")
    vals = np.frombuffer(raw[20:], dtype="<f4").astype(np.float64)
    chunks = np.split(vals, np.cumsum(sizes)[:-1])
    return HeadParams(
        conv_w=chunks[0].reshape(c_hid, c + 2, v, v),
        conv_b=chunks[1],
        mlp1_w=chunks[2].reshape(h2, c_hid),
        mlp1_b=chunks[3],
        mlp2_w=chunks[4],
        mlp2_b=float(chunks[5][0]),
    )
