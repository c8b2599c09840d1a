"""Shared domain types: boxes, detections, tracklets, feature maps."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np


class P2ITrackError(Exception):
    """Base class for all package errors."""


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box as top-left corner plus size, in pixels.

    Width and height must be strictly positive; degenerate boxes are
    rejected at construction.
    """

    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        if not (self.w > 0 and self.h > 0):
            raise ValueError(f"box size must be positive, got w={self.w}, h={self.h}")

    def center(self) -> tuple[float, float]:
        return (self.x + self.w / 2.0, self.y + self.h / 2.0)

    def area(self) -> float:
        return self.w * self.h

    def right(self) -> float:
        return self.x + self.w

    def bottom(self) -> float:
        return self.y + self.h


def iou(a: BBox, b: BBox) -> float:
    """Intersection-over-union of two boxes. Symmetric, in [0, 1]."""
    ix = min(a.right(), b.right()) - max(a.x, b.x)
    iy = min(a.bottom(), b.bottom()) - max(a.y, b.y)
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    return inter / (a.area() + b.area() - inter)


def grid_box(box: BBox, stride: float) -> BBox:
    """Map an image-pixel box onto the feature grid by dividing all four
    coordinates by ``stride``. No rounding: fractional coordinates are
    kept so downstream bilinear sampling stays exact."""
    if stride <= 0:
        raise ValueError(f"stride must be positive, got {stride}")
    return BBox(box.x / stride, box.y / stride, box.w / stride, box.h / stride)


def iou_matrix(boxes_a: list[BBox], boxes_b: list[BBox]) -> np.ndarray:
    """Pairwise IoU, shape (len(a), len(b))."""
    out = np.zeros((len(boxes_a), len(boxes_b)), dtype=np.float64)
    for i, a in enumerate(boxes_a):
        for j, b in enumerate(boxes_b):
            out[i, j] = iou(a, b)
    return out


@dataclass(frozen=True)
class Detection:
    """One detector output: frame index (1-based), box, confidence, class."""

    frame: int
    box: BBox
    score: float
    class_id: int = 0

    def __post_init__(self):
        if not (0.0 <= self.score <= 1.0):
            raise ValueError(f"score must lie in [0, 1], got {self.score}")


class TrackState(enum.Enum):
    ACTIVE = "active"
    LOST = "lost"
    TERMINATED = "terminated"


@dataclass(frozen=True)
class TrackPoint:
    frame: int
    box: BBox
    class_id: int
    score: float


@dataclass
class KalmanState:
    """Gaussian state over (cx, cy, aspect, height) and their velocities."""

    mean: np.ndarray        # shape (8,)
    covariance: np.ndarray  # shape (8, 8), symmetric PSD

    def copy(self) -> "KalmanState":
        return KalmanState(self.mean.copy(), self.covariance.copy())


@dataclass
class Tracklet:
    """One tracked identity: ordered box history plus live filter state.

    ``history`` frames are strictly increasing; ``lost_age`` counts frames
    since the last matched detection and is zero exactly while ACTIVE.
    Identifiers are never reassigned within a sequence.
    """

    id: int
    t0: int
    history: list[TrackPoint] = field(default_factory=list)
    state: TrackState = TrackState.ACTIVE
    lost_age: int = 0
    kalman: KalmanState | None = None
    class_counts: dict[int, int] = field(default_factory=dict)
    # Box used when reading this tracklet's relations off the previous
    # frame; refreshed every step (matched: detection box, else predicted).
    assoc_box: BBox | None = None

    def append(self, point: TrackPoint) -> None:
        if self.history and point.frame <= self.history[-1].frame:
            raise ValueError(
                f"history frames must strictly increase: "
                f"{point.frame} after {self.history[-1].frame}"
            )
        self.history.append(point)
        self.class_counts[point.class_id] = self.class_counts.get(point.class_id, 0) + 1

    def last_box(self) -> BBox:
        if not self.history:
            raise ValueError("tracklet has empty history")
        return self.history[-1].box


@dataclass(frozen=True)
class SequenceMeta:
    name: str
    fps: float
    width: int
    height: int
    length: int

    def __post_init__(self):
        if self.fps <= 0:
            raise ValueError(f"fps must be positive, got {self.fps}")
        if self.length < 1:
            raise ValueError(f"length must be >= 1, got {self.length}")


class NonFiniteValue(P2ITrackError):
    pass


@dataclass
class FeatureMap:
    """Dense descriptor grid at 1/``stride`` of image resolution.

    ``data`` has shape (h, w, d); all values must be finite.
    """

    data: np.ndarray
    stride: int = 8

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.data.ndim != 3:
            raise ValueError(f"feature data must be 3-d, got shape {self.data.shape}")
        if not np.all(np.isfinite(self.data)):
            raise NonFiniteValue("feature map contains non-finite values")

    @property
    def h(self) -> int:
        return self.data.shape[0]

    @property
    def w(self) -> int:
        return self.data.shape[1]

    @property
    def d(self) -> int:
        return self.data.shape[2]
