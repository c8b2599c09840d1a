"""Scenario attributes: five per-dataset difficulty scores and their
normalized map.

Raw scores are computed from ground-truth trajectories; the map rescales
each attribute to [0, 1] across datasets by min-max, with frame rate
inverted so that harder (lower-fps) scenarios score higher.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .core import BBox, P2ITrackError

Track = list[tuple[int, BBox]]          # (frame, box), frames increasing
FrameBoxes = list[list[BBox]]           # boxes per frame

SMALL_AREA_THRESH = 1024.0  # 32x32, COCO small-object convention


class NoEligibleTracks(P2ITrackError):
    pass


@dataclass(frozen=True)
class AttributeVector:
    motion_complexity: float
    variation_amplitude: float
    target_density: float
    small_target: float
    frame_rate: float

    def as_array(self) -> np.ndarray:
        return np.array([
            self.motion_complexity, self.variation_amplitude,
            self.target_density, self.small_target, self.frame_rate,
        ])


ATTRIBUTE_NAMES = (
    "motion_complexity", "variation_amplitude", "target_density",
    "small_target", "frame_rate",
)


def _velocities(track: Track) -> np.ndarray:
    centers = np.array([b.center() for _, b in track], dtype=np.float64)
    return np.diff(centers, axis=0)


def motion_complexity(tracks: list[Track], lambda_dir: float = 0.5) -> float:
    """Irregularity of motion: per track, the population variance of the
    successive speed magnitudes plus the circular variance of the motion
    directions (1 - |mean unit direction|), combined as a weighted sum
    and averaged over tracks. Tracks need at least two velocities."""
    per_track = []
    for track in tracks:
        if len(track) < 3:
            continue
        v = _velocities(track)
        speeds = np.linalg.norm(v, axis=1)
        speed_var = float(np.var(speeds))
        moving = v[speeds > 1e-12]
        if len(moving) == 0:
            circ_var = 0.0
        else:
            units = moving / np.linalg.norm(moving, axis=1, keepdims=True)
            circ_var = float(1.0 - np.linalg.norm(units.mean(axis=0)))
        per_track.append((1.0 - lambda_dir) * speed_var + lambda_dir * circ_var)
    if not per_track:
        raise NoEligibleTracks("no track has >= 3 points")
    return float(np.mean(per_track))


def variation_amplitude(tracks: list[Track], lambda_pos: float = 0.5) -> float:
    """Target variability: aspect-ratio variance plus mean displacement
    relative to the target's own size (sqrt of its area)."""
    per_track = []
    for track in tracks:
        if len(track) < 2:
            continue
        boxes = [b for _, b in track]
        aspects = np.array([b.w / b.h for b in boxes])
        aspect_var = float(np.var(aspects))
        disps = _velocities(track)
        sizes = np.array([np.sqrt(b.area()) for b in boxes[:-1]])
        rel = float(np.mean(np.linalg.norm(disps, axis=1) / sizes))
        per_track.append((1.0 - lambda_pos) * aspect_var + lambda_pos * rel)
    if not per_track:
        raise NoEligibleTracks("no track has >= 2 points")
    return float(np.mean(per_track))


def target_density(frames: FrameBoxes) -> float:
    """Occlusion pressure per capita: within each frame, pairs of targets
    closer than half the mean body size ((w+h)/2), divided by the number
    of targets, averaged over frames."""
    per_frame = []
    for boxes in frames:
        if not boxes:
            continue
        body = float(np.mean([(b.w + b.h) / 2.0 for b in boxes]))
        centers = np.array([b.center() for b in boxes])
        count = 0
        for i in range(len(boxes)):
            for j in range(i + 1, len(boxes)):
                if np.linalg.norm(centers[i] - centers[j]) < 0.5 * body:
                    count += 1
        per_frame.append(count / len(boxes))
    return float(np.mean(per_frame)) if per_frame else 0.0


def small_target(frames: FrameBoxes, area_thresh: float = SMALL_AREA_THRESH) -> float:
    """Mean number of targets per frame with area strictly below threshold."""
    per_frame = [
        sum(1 for b in boxes if b.area() < area_thresh) for boxes in frames
    ]
    return float(np.mean(per_frame)) if per_frame else 0.0


def profile_sequence(
    tracks: list[Track],
    frames: FrameBoxes,
    fps: float,
    lambda_dir: float = 0.5,
    lambda_pos: float = 0.5,
    area_thresh: float = SMALL_AREA_THRESH,
) -> AttributeVector:
    return AttributeVector(
        motion_complexity=motion_complexity(tracks, lambda_dir),
        variation_amplitude=variation_amplitude(tracks, lambda_pos),
        target_density=target_density(frames),
        small_target=small_target(frames, area_thresh),
        frame_rate=fps,
    )


def normalize(raw: list[AttributeVector]) -> list[np.ndarray]:
    """Min-max map across datasets, one normalized 5-vector per input.

    Frame rate is inverted (1 - minmax) so low-fps scenarios score high;
    constant columns map to zero. A single dataset cannot be normalized
    meaningfully and yields zeros with a warning.
    """
    if len(raw) < 2:
        warnings.warn("normalization needs >= 2 datasets; returning zeros")
        return [np.zeros(5) for _ in raw]
    mat = np.stack([v.as_array() for v in raw])
    lo = mat.min(axis=0)
    hi = mat.max(axis=0)
    span = hi - lo
    out = np.zeros_like(mat)
    nz = span > 1e-12
    out[:, nz] = (mat[:, nz] - lo[nz]) / span[nz]
    if nz[4]:
        out[:, 4] = 1.0 - out[:, 4]
    return [out[i] for i in range(len(raw))]
