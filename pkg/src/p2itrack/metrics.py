"""Tracking metrics: CLEAR (MOTA, IDs, FP, FN, MT, ML), IDF1, HOTA.

All metrics consume the same structure: a mapping from 1-based frame
index to a list of (identity, box, class_id) triples, one mapping for
ground truth and one for the tracker output.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .assoc import hungarian
from .core import BBox, P2ITrackError, iou_matrix

Frames = dict[int, list[tuple[int, BBox, int]]]

HOTA_ALPHAS = [round(0.05 * k, 2) for k in range(1, 20)]
_BIG = 1e9


class EmptyGT(P2ITrackError):
    pass


def match_frame(
    gt_boxes: list[BBox], pred_boxes: list[BBox], iou_min: float = 0.5
) -> list[tuple[int, int]]:
    """Minimum-(1-IoU) assignment keeping only pairs with IoU >= iou_min."""
    if not gt_boxes or not pred_boxes:
        return []
    ious = iou_matrix(gt_boxes, pred_boxes)
    cost = np.where(ious >= iou_min, 1.0 - ious, _BIG)
    res = hungarian(cost)
    return [(g, p) for g, p in res.matches if ious[g, p] >= iou_min]


def _frames_union(gt: Frames, pred: Frames) -> list[int]:
    return sorted(set(gt) | set(pred))


def _total_boxes(frames: Frames) -> int:
    return sum(len(v) for v in frames.values())


@dataclass
class ClearResult:
    mota: float
    ids: int
    fp: int
    fn: int
    mt: int
    ml: int
    n_gt_tracks: int


def clear_mot(gt: Frames, pred: Frames, iou_min: float = 0.5) -> ClearResult:
    """Frame-by-frame matching; an ID switch is counted whenever a ground
    truth identity's matched tracker id differs from its previously
    matched one."""
    n_gt = _total_boxes(gt)
    if n_gt == 0:
        raise EmptyGT("ground truth contains no boxes")
    fp = fn = ids = 0
    last_match: dict[int, int] = {}
    gt_frames_per_track: dict[int, int] = {}
    matched_frames_per_track: dict[int, int] = {}
    for f in _frames_union(gt, pred):
        g = gt.get(f, [])
        p = pred.get(f, [])
        for gid, _, _ in g:
            gt_frames_per_track[gid] = gt_frames_per_track.get(gid, 0) + 1
        matches = match_frame([b for _, b, _ in g], [b for _, b, _ in p], iou_min)
        fp += len(p) - len(matches)
        fn += len(g) - len(matches)
        for gi, pi in matches:
            gid = g[gi][0]
            pid = p[pi][0]
            matched_frames_per_track[gid] = matched_frames_per_track.get(gid, 0) + 1
            if gid in last_match and last_match[gid] != pid:
                ids += 1
            last_match[gid] = pid
    mt = ml = 0
    for gid, total in gt_frames_per_track.items():
        cov = matched_frames_per_track.get(gid, 0) / total
        if cov >= 0.8:
            mt += 1
        elif cov <= 0.2:
            ml += 1
    mota = 1.0 - (fp + fn + ids) / n_gt
    return ClearResult(mota, ids, fp, fn, mt, ml, len(gt_frames_per_track))


def idf1(gt: Frames, pred: Frames, iou_min: float = 0.5) -> float:
    """Identity F1: one global identity-to-identity assignment maximizing
    the number of frames where the paired boxes overlap at iou_min."""
    n_gt = _total_boxes(gt)
    if n_gt == 0:
        raise EmptyGT("ground truth contains no boxes")
    n_pred = _total_boxes(pred)
    if n_pred == 0:
        return 0.0
    gids = sorted({i for v in gt.values() for i, _, _ in v})
    pids = sorted({i for v in pred.values() for i, _, _ in v})
    gidx = {g: k for k, g in enumerate(gids)}
    pidx = {p: k for k, p in enumerate(pids)}
    overlap = np.zeros((len(gids), len(pids)), dtype=np.float64)
    for f in _frames_union(gt, pred):
        g = gt.get(f, [])
        p = pred.get(f, [])
        if not g or not p:
            continue
        ious = iou_matrix([b for _, b, _ in g], [b for _, b, _ in p])
        for a, (gid, _, _) in enumerate(g):
            for b, (pid, _, _) in enumerate(p):
                if ious[a, b] >= iou_min:
                    overlap[gidx[gid], pidx[pid]] += 1.0
    res = hungarian(-overlap)
    idtp = sum(overlap[g, p] for g, p in res.matches)
    idfp = n_pred - idtp
    idfn = n_gt - idtp
    return float(2 * idtp / (2 * idtp + idfp + idfn))


@dataclass
class HotaResult:
    hota: float
    deta: float
    assa: float


def hota(gt: Frames, pred: Frames) -> HotaResult:
    """Higher-order tracking accuracy averaged over 19 IoU thresholds.

    Per threshold, frame-level matches are chosen by an assignment that
    prefers pairs of identities that co-occur often across the sequence
    (global alignment), then detection and association accuracies are
    combined as sqrt(DetA * AssA).
    """
    if _total_boxes(gt) == 0:
        raise EmptyGT("ground truth contains no boxes")
    if _total_boxes(pred) == 0:
        return HotaResult(0.0, 0.0, 0.0)

    gids = sorted({i for v in gt.values() for i, _, _ in v})
    pids = sorted({i for v in pred.values() for i, _, _ in v})
    gidx = {g: k for k, g in enumerate(gids)}
    pidx = {p: k for k, p in enumerate(pids)}
    frames = _frames_union(gt, pred)

    sims = {}
    for f in frames:
        g = gt.get(f, [])
        p = pred.get(f, [])
        sims[f] = iou_matrix([b for _, b, _ in g], [b for _, b, _ in p])

    # Soft co-occurrence of identities, used only to steer the per-frame
    # assignment toward globally consistent pairs.
    potential = np.zeros((len(gids), len(pids)))
    gt_count = np.zeros(len(gids))
    pred_count = np.zeros(len(pids))
    for f in frames:
        g = gt.get(f, [])
        p = pred.get(f, [])
        s = sims[f]
        if g and p:
            denom = s.sum(0)[None, :] + s.sum(1)[:, None] - s
            ratio = np.divide(s, denom, out=np.zeros_like(s), where=denom > 1e-12)
            for a, (gid, _, _) in enumerate(g):
                for b, (pid, _, _) in enumerate(p):
                    potential[gidx[gid], pidx[pid]] += ratio[a, b]
        for gid, _, _ in g:
            gt_count[gidx[gid]] += 1
        for pid, _, _ in p:
            pred_count[pidx[pid]] += 1
    global_align = potential / (gt_count[:, None] + pred_count[None, :] - potential)

    n_alpha = len(HOTA_ALPHAS)
    tp = np.zeros(n_alpha)
    fn = np.zeros(n_alpha)
    fp = np.zeros(n_alpha)
    match_count = [np.zeros((len(gids), len(pids))) for _ in range(n_alpha)]
    for f in frames:
        g = gt.get(f, [])
        p = pred.get(f, [])
        s = sims[f]
        if g and p:
            score = np.zeros_like(s)
            for a, (gid, _, _) in enumerate(g):
                for b, (pid, _, _) in enumerate(p):
                    score[a, b] = global_align[gidx[gid], pidx[pid]] * s[a, b]
            res = hungarian(-score)
            pairs = res.matches
        else:
            pairs = []
        for k, alpha in enumerate(HOTA_ALPHAS):
            n_match = 0
            for a, b in pairs:
                if s[a, b] >= alpha:
                    n_match += 1
                    match_count[k][gidx[g[a][0]], pidx[p[b][0]]] += 1
            tp[k] += n_match
            fn[k] += len(g) - n_match
            fp[k] += len(p) - n_match

    hota_a = np.zeros(n_alpha)
    deta_a = np.zeros(n_alpha)
    assa_a = np.zeros(n_alpha)
    for k in range(n_alpha):
        mc = match_count[k]
        denom = gt_count[:, None] + pred_count[None, :] - mc
        ass = np.divide(mc, denom, out=np.zeros_like(mc), where=denom > 1e-12)
        deta_a[k] = tp[k] / max(1.0, tp[k] + fn[k] + fp[k])
        assa_a[k] = float((mc * ass).sum() / max(1.0, tp[k]))
        hota_a[k] = np.sqrt(deta_a[k] * assa_a[k])
    return HotaResult(float(hota_a.mean()), float(deta_a.mean()), float(assa_a.mean()))


@dataclass
class EvalReport:
    mota: float
    idf1: float
    hota: float
    deta: float
    assa: float
    ids: int
    mt: int
    ml: int
    fp: int
    fn: int
    per_class: dict[int, dict[str, float]] = field(default_factory=dict)
    m_mota: float | None = None
    m_idf1: float | None = None
    m_hota: float | None = None

    def to_dict(self) -> dict:
        out = {
            "MOTA": self.mota, "IDF1": self.idf1, "HOTA": self.hota,
            "DetA": self.deta, "AssA": self.assa, "IDs": self.ids,
            "MT": self.mt, "ML": self.ml, "FP": self.fp, "FN": self.fn,
        }
        if self.per_class:
            out["per_class"] = {
                str(c): dict(v) for c, v in sorted(self.per_class.items())
            }
            out["mMOTA"] = self.m_mota
            out["mIDF1"] = self.m_idf1
            out["mHOTA"] = self.m_hota
        return out


def _filter_class(frames: Frames, class_id: int) -> Frames:
    out: Frames = {}
    for f, rows in frames.items():
        kept = [r for r in rows if r[2] == class_id]
        if kept:
            out[f] = kept
    return out


def evaluate(
    gt: Frames, pred: Frames, iou_min: float = 0.5, per_class: bool = False
) -> EvalReport:
    """Full report; with ``per_class`` the metrics are recomputed within
    every class present in the ground truth and averaged arithmetically."""
    clear = clear_mot(gt, pred, iou_min)
    idf = idf1(gt, pred, iou_min)
    h = hota(gt, pred)
    report = EvalReport(
        mota=clear.mota, idf1=idf, hota=h.hota, deta=h.deta, assa=h.assa,
        ids=clear.ids, mt=clear.mt, ml=clear.ml, fp=clear.fp, fn=clear.fn,
    )
    if per_class:
        classes = sorted({c for v in gt.values() for _, _, c in v})
        for cls in classes:
            gt_c = _filter_class(gt, cls)
            pred_c = _filter_class(pred, cls)
            clear_c = clear_mot(gt_c, pred_c, iou_min)
            idf_c = idf1(gt_c, pred_c, iou_min)
            hota_c = hota(gt_c, pred_c) if _total_boxes(pred_c) else HotaResult(0, 0, 0)
            report.per_class[cls] = {
                "MOTA": clear_c.mota, "IDF1": idf_c, "HOTA": hota_c.hota,
                "IDs": clear_c.ids,
            }
        report.m_mota = float(np.mean([v["MOTA"] for v in report.per_class.values()]))
        report.m_idf1 = float(np.mean([v["IDF1"] for v in report.per_class.values()]))
        report.m_hota = float(np.mean([v["HOTA"] for v in report.per_class.values()]))
    return report


def render_table(report: EvalReport) -> str:
    """Aligned plain-text rendering of a report."""
    rows = [
        ("MOTA", f"{report.mota:.4f}"), ("IDF1", f"{report.idf1:.4f}"),
        ("HOTA", f"{report.hota:.4f}"), ("DetA", f"{report.deta:.4f}"),
        ("AssA", f"{report.assa:.4f}"), ("IDs", str(report.ids)),
        ("MT", str(report.mt)), ("ML", str(report.ml)),
        ("FP", str(report.fp)), ("FN", str(report.fn)),
    ]
    if report.per_class:
        rows += [
            ("mMOTA", f"{report.m_mota:.4f}"),
            ("mIDF1", f"{report.m_idf1:.4f}"),
            ("mHOTA", f"{report.m_hota:.4f}"),
        ]
    width = max(len(k) for k, _ in rows)
    return "\n".join(f"{k:<{width}}  {v}" for k, v in rows)
