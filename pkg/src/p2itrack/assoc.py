"""Online association: assignment, Kalman recovery, tracklet lifecycle.

Two-stage matching over the affinity matrix: high-confidence detections
are assigned by minimum-cost matching on (1 - affinity); leftover
tracklets then try to pick up low-confidence detections by IoU against
their Kalman-predicted boxes. Matching is class-agnostic; a trajectory's
class is corrected afterwards to its most frequent label.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.optimize import linear_sum_assignment

from .core import (
    BBox,
    Detection,
    KalmanState,
    P2ITrackError,
    TrackPoint,
    TrackState,
    Tracklet,
    iou,
    iou_matrix,
)


class DimMismatch(P2ITrackError):
    pass


class SingularInnovation(P2ITrackError):
    pass


@dataclass
class AssocConfig:
    match_thresh: float = 0.3
    det_high: float = 0.6
    det_low: float = 0.1
    init_thresh: float = 0.7
    max_lost_age: int = 30
    iou_thresh_low: float = 0.5
    # Lost tracklets also compete in the relation stage, not only in the
    # Kalman/IoU stage; disable to restrict them to stage 2.
    include_lost_in_stage1: bool = True

    def __post_init__(self):
        if not (0.0 <= self.det_low <= self.det_high <= 1.0):
            raise ValueError("need 0 <= det_low <= det_high <= 1")
        if self.max_lost_age < 1:
            raise ValueError("max_lost_age must be >= 1")


@dataclass
class AssignmentResult:
    matches: list[tuple[int, int]]
    unmatched_rows: list[int]
    unmatched_cols: list[int]


def hungarian(cost: np.ndarray) -> AssignmentResult:
    """Minimum-cost assignment with a deterministic tie-break.

    Rectangular matrices behave like the square padded with a flat
    dummy cost: exactly min(n, m) pairs are matched, the rest report as
    unmatched. Among equal-cost optima the lexicographically smallest
    match list (sorted by row) is returned; that refinement re-solves
    reduced problems per row, fine at tracking scale but quadratic in
    solver calls.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2:
        raise ValueError(f"cost must be 2-d, got shape {cost.shape}")
    n, m = cost.shape
    if n == 0 or m == 0:
        return AssignmentResult([], list(range(n)), list(range(m)))
    if not np.all(np.isfinite(cost)):
        raise ValueError("cost matrix must be finite")

    rows, cols = linear_sum_assignment(cost)
    best = float(cost[rows, cols].sum())

    # Fix rows in order, each to the smallest free column that still
    # completes to an optimal total; rows that admit no such column stay
    # unmatched (only possible when n > m).
    matches: list[tuple[int, int]] = []
    free_cols = list(range(m))
    fixed_cost = 0.0
    for r in range(n):
        rest_rows = list(range(r + 1, n))
        chosen = -1
        for c in free_cols:
            rest = _optimal_rest(cost, rest_rows, [cc for cc in free_cols if cc != c])
            if fixed_cost + cost[r, c] + rest <= best + 1e-9:
                chosen = c
                break
        if chosen >= 0:
            matches.append((r, chosen))
            free_cols.remove(chosen)
            fixed_cost += cost[r, chosen]

    matched_rows = {r for r, _ in matches}
    matched_cols = {c for _, c in matches}
    return AssignmentResult(
        matches,
        [r for r in range(n) if r not in matched_rows],
        [c for c in range(m) if c not in matched_cols],
    )


def _optimal_rest(cost: np.ndarray, rows: list[int], cols: list[int]) -> float:
    """Min cost of assigning the remaining rows into the remaining cols
    (only min(len(rows), len(cols)) of them are used)."""
    if not rows or not cols:
        return 0.0
    sub = cost[np.ix_(rows, cols)]
    rr, cc = linear_sum_assignment(sub)
    return float(sub[rr, cc].sum())


# Constant-velocity filter over (cx, cy, aspect, height). Noise scales
# with the box height, following common bounding-box tracker practice.
_STD_POS = 1.0 / 20.0
_STD_VEL = 1.0 / 160.0

_F = np.eye(8)
_F[:4, 4:] = np.eye(4)
_H = np.eye(4, 8)


def box_to_measurement(box: BBox) -> np.ndarray:
    cx, cy = box.center()
    return np.array([cx, cy, box.w / box.h, box.h], dtype=np.float64)


def measurement_to_box(z: np.ndarray) -> BBox:
    cx, cy, aspect, h = z
    h = max(float(h), 1e-6)
    w = max(float(aspect) * h, 1e-6)
    return BBox(cx - w / 2.0, cy - h / 2.0, w, h)


def kalman_initiate(box: BBox) -> KalmanState:
    z = box_to_measurement(box)
    mean = np.zeros(8)
    mean[:4] = z
    h = z[3]
    std = np.array([
        2 * _STD_POS * h, 2 * _STD_POS * h, 1e-2, 2 * _STD_POS * h,
        10 * _STD_VEL * h, 10 * _STD_VEL * h, 1e-5, 10 * _STD_VEL * h,
    ])
    return KalmanState(mean, np.diag(std ** 2))


def kalman_predict(state: KalmanState) -> KalmanState:
    h = max(state.mean[3], 1e-6)
    std = np.array([
        _STD_POS * h, _STD_POS * h, 1e-2, _STD_POS * h,
        _STD_VEL * h, _STD_VEL * h, 1e-5, _STD_VEL * h,
    ])
    mean = _F @ state.mean
    cov = _F @ state.covariance @ _F.T + np.diag(std ** 2)
    return KalmanState(mean, 0.5 * (cov + cov.T))


def kalman_update(state: KalmanState, box: BBox) -> KalmanState:
    z = box_to_measurement(box)
    h = max(state.mean[3], 1e-6)
    std = np.array([_STD_POS * h, _STD_POS * h, 1e-1, _STD_POS * h])
    r_cov = np.diag(std ** 2)
    s_cov = _H @ state.covariance @ _H.T + r_cov
    try:
        chol = scipy.linalg.cho_factor(s_cov, lower=True, check_finite=False)
    except scipy.linalg.LinAlgError as exc:
        raise SingularInnovation(f"innovation covariance not invertible: {exc}") from exc
    gain = scipy.linalg.cho_solve(chol, (state.covariance @ _H.T).T, check_finite=False).T
    innovation = z - _H @ state.mean
    mean = state.mean + gain @ innovation
    cov = state.covariance - gain @ s_cov @ gain.T
    mean[3] = max(mean[3], 1e-6)
    return KalmanState(mean, 0.5 * (cov + cov.T))


def kalman_box(state: KalmanState) -> BBox:
    return measurement_to_box(state.mean[:4])


@dataclass
class StepResult:
    tracklets: list[Tracklet]
    rows: list[TrackPoint]           # (frame, box, class, score) with ids below
    row_ids: list[int]
    next_id: int


def step(
    trks: list[Tracklet],
    dets: list[Detection],
    affinity: np.ndarray,
    cfg: AssocConfig,
    frame: int,
    next_id: int | None = None,
) -> StepResult:
    """One association round for frame ``frame``.

    ``affinity`` has one row per detection with score >= det_high (in
    input order) and one column per live tracklet in ``trks``. Stage 1
    solves (1 - affinity) and keeps pairs at or above match_thresh;
    stage 2 matches leftover tracklets to mid-score detections by IoU
    against Kalman predictions. Unmatched tracklets age out; unmatched
    high detections above init_thresh found new identities. Class labels
    never influence matching; they are only counted on the trajectory.
    """
    live = [t for t in trks if t.state is not TrackState.TERMINATED]
    if next_id is None:
        next_id = max((t.id for t in trks), default=0) + 1

    high = [i for i, d in enumerate(dets) if d.score >= cfg.det_high]
    low = [i for i, d in enumerate(dets)
           if cfg.det_low <= d.score < cfg.det_high]
    affinity = np.asarray(affinity, dtype=np.float64)
    if affinity.shape != (len(high), len(live)):
        raise DimMismatch(
            f"affinity shape {affinity.shape} != (high dets {len(high)}, "
            f"live tracklets {len(live)})"
        )

    # Advance every live filter to the current frame first.
    for t in live:
        if t.kalman is not None:
            t.kalman = kalman_predict(t.kalman)

    stage1_cols = [
        j for j, t in enumerate(live)
        if t.state is TrackState.ACTIVE or cfg.include_lost_in_stage1
    ]
    matched_dets: dict[int, int] = {}  # det index -> tracklet list index
    if high and stage1_cols:
        sub = affinity[:, stage1_cols]
        res = hungarian(1.0 - sub)
        for r, c in res.matches:
            if sub[r, c] >= cfg.match_thresh:
                matched_dets[high[r]] = stage1_cols[c]

    rem_trks = [j for j in range(len(live)) if j not in matched_dets.values()]
    rem_high = [i for i in high if i not in matched_dets]

    # Stage 2: leftover tracklets vs mid-score detections, IoU on the
    # Kalman-predicted boxes.
    if rem_trks and low:
        pred_boxes = [
            kalman_box(live[j].kalman) if live[j].kalman is not None
            else live[j].last_box()
            for j in rem_trks
        ]
        det_boxes = [dets[i].box for i in low]
        ious = iou_matrix(det_boxes, pred_boxes)
        res = hungarian(1.0 - ious)
        for r, c in res.matches:
            if ious[r, c] >= cfg.iou_thresh_low:
                matched_dets[low[r]] = rem_trks[c]

    rows: list[TrackPoint] = []
    row_ids: list[int] = []
    matched_trk_idx = set(matched_dets.values())

    for det_idx, trk_idx in sorted(matched_dets.items()):
        t = live[trk_idx]
        d = dets[det_idx]
        t.state = TrackState.ACTIVE
        t.lost_age = 0
        t.append(TrackPoint(frame, d.box, d.class_id, d.score))
        t.assoc_box = d.box
        if t.kalman is None:
            t.kalman = kalman_initiate(d.box)
        else:
            t.kalman = kalman_update(t.kalman, d.box)
        rows.append(TrackPoint(frame, d.box, d.class_id, d.score))
        row_ids.append(t.id)

    for j, t in enumerate(live):
        if j in matched_trk_idx:
            continue
        t.lost_age += 1
        t.state = TrackState.LOST
        if t.lost_age > cfg.max_lost_age:
            t.state = TrackState.TERMINATED
        elif t.kalman is not None:
            t.assoc_box = kalman_box(t.kalman)

    for i in rem_high:
        d = dets[i]
        if d.score >= cfg.init_thresh:
            t = Tracklet(id=next_id, t0=frame)
            next_id += 1
            t.append(TrackPoint(frame, d.box, d.class_id, d.score))
            t.kalman = kalman_initiate(d.box)
            t.assoc_box = d.box
            trks.append(t)
            rows.append(TrackPoint(frame, d.box, d.class_id, d.score))
            row_ids.append(t.id)

    return StepResult(trks, rows, row_ids, next_id)


def correct_classes(trk: Tracklet) -> list[TrackPoint]:
    """Re-emit the trajectory with every row set to its majority class
    (ties break to the smallest class id)."""
    if not trk.history:
        raise ValueError("tracklet has empty history")
    best = min(
        trk.class_counts.items(), key=lambda kv: (-kv[1], kv[0])
    )[0]
    return [
        TrackPoint(p.frame, p.box, best, p.score) for p in trk.history
    ]


@dataclass
class GreedyIoUTracker:
    """Kalman + greedy-IoU baseline: repeatedly takes the best remaining
    IoU pair above threshold. Same birth/death thresholds as the relation
    tracker so comparisons isolate the association signal."""

    cfg: AssocConfig = field(default_factory=AssocConfig)
    iou_thresh: float = 0.3
    tracklets: list[Tracklet] = field(default_factory=list)
    next_id: int = 1

    def step(self, dets: list[Detection], frame: int) -> tuple[list[TrackPoint], list[int]]:
        live = [t for t in self.tracklets if t.state is not TrackState.TERMINATED]
        for t in live:
            if t.kalman is not None:
                t.kalman = kalman_predict(t.kalman)
        cand = [i for i, d in enumerate(dets) if d.score >= self.cfg.det_high]
        pred_boxes = [
            kalman_box(t.kalman) if t.kalman is not None else t.last_box()
            for t in live
        ]
        pairs = []
        for i in cand:
            for j in range(len(live)):
                val = iou(dets[i].box, pred_boxes[j])
                if val >= self.iou_thresh:
                    pairs.append((-val, i, j))
        pairs.sort()
        used_d: set[int] = set()
        used_t: set[int] = set()
        rows: list[TrackPoint] = []
        row_ids: list[int] = []
        for _, i, j in pairs:
            if i in used_d or j in used_t:
                continue
            used_d.add(i)
            used_t.add(j)
            t = live[j]
            d = dets[i]
            t.state = TrackState.ACTIVE
            t.lost_age = 0
            t.append(TrackPoint(frame, d.box, d.class_id, d.score))
            t.kalman = kalman_update(t.kalman, d.box) if t.kalman else kalman_initiate(d.box)
            rows.append(TrackPoint(frame, d.box, d.class_id, d.score))
            row_ids.append(t.id)
        for j, t in enumerate(live):
            if j in used_t:
                continue
            t.lost_age += 1
            t.state = TrackState.LOST
            if t.lost_age > self.cfg.max_lost_age:
                t.state = TrackState.TERMINATED
        for i in cand:
            if i in used_d:
                continue
            d = dets[i]
            if d.score >= self.cfg.init_thresh:
                t = Tracklet(id=self.next_id, t0=frame)
                self.next_id += 1
                t.append(TrackPoint(frame, d.box, d.class_id, d.score))
                t.kalman = kalman_initiate(d.box)
                self.tracklets.append(t)
                rows.append(TrackPoint(frame, d.box, d.class_id, d.score))
                row_ids.append(t.id)
        return rows, row_ids
