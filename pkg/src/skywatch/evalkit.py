"""Matching detections to ground truth, precision-recall and average precision.

Boxes are squares given by centre (row, col) and side. CSV files use
``center_x`` for the column and ``center_y`` for the row.
"""

from __future__ import annotations

import csv
import json
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class GroundTruthBox:
    frame: int
    row: float
    col: float
    side: float

    def __post_init__(self):
        if not self.side > 0:
            raise ValueError(f"ground-truth side must be positive, got {self.side}")


@dataclass(frozen=True)
class Detection:
    frame: int
    row: float
    col: float
    side: float
    score: float
    level: int = 0
    velocity: tuple[float, float] | None = None


@dataclass
class PRCurve:
    thresholds: np.ndarray
    recall: np.ndarray
    precision: np.ndarray
    tp: np.ndarray
    fp: np.ndarray
    n_gt: int

    @property
    def fn(self) -> np.ndarray:
        return self.n_gt - self.tp

    def points(self) -> list[tuple[float, float]]:
        return list(zip(self.recall.tolist(), self.precision.tolist()))


@dataclass
class MatchResult:
    tp: np.ndarray
    gt_index: np.ndarray
    gt_matched: np.ndarray = field(repr=False)


def iou(a, b) -> float:
    """IoU of two ``(row, col, side)`` squares."""
    ra, ca, sa = a
    rb, cb, sb = b
    h = min(ra + sa / 2, rb + sb / 2) - max(ra - sa / 2, rb - sb / 2)
    w = min(ca + sa / 2, cb + sb / 2) - max(ca - sa / 2, cb - sb / 2)
    if h <= 0 or w <= 0:
        return 0.0
    inter = h * w
    return inter / (sa * sa + sb * sb - inter)


def iou_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise IoU of ``(N, 3)`` and ``(M, 3)`` (row, col, side) arrays."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 3)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 3)
    ha, hb = a[:, 2:3] / 2, b[None, :, 2] / 2
    h = np.minimum(a[:, 0:1] + ha, b[None, :, 0] + hb) - np.maximum(a[:, 0:1] - ha, b[None, :, 0] - hb)
    w = np.minimum(a[:, 1:2] + ha, b[None, :, 1] + hb) - np.maximum(a[:, 1:2] - ha, b[None, :, 1] - hb)
    inter = np.clip(h, 0, None) * np.clip(w, 0, None)
    union = a[:, 2:3] ** 2 + b[None, :, 2] ** 2 - inter
    return inter / union


def _box(d) -> tuple[float, float, float]:
    return (d.row, d.col, d.side)


def match_detections(detections, ground_truths, iou_threshold: float = 0.5) -> MatchResult:
    """Greedy single-match per frame, in the given (descending score) order."""
    gts_by_frame = defaultdict(list)
    for k, g in enumerate(ground_truths):
        gts_by_frame[g.frame].append(k)
    gt_matched = np.zeros(len(ground_truths), dtype=bool)
    tp = np.zeros(len(detections), dtype=bool)
    gt_index = np.full(len(detections), -1, dtype=np.int64)
    for n, d in enumerate(detections):
        best, best_iou = -1, -1.0
        for k in gts_by_frame.get(d.frame, ()):
            if gt_matched[k]:
                continue
            v = iou(_box(d), _box(ground_truths[k]))
            if v > best_iou:
                best, best_iou = k, v
        if best >= 0 and best_iou >= iou_threshold:
            tp[n] = True
            gt_index[n] = best
            gt_matched[best] = True
    return MatchResult(tp, gt_index, gt_matched)


def sort_detections(detections) -> list[Detection]:
    return sorted(detections, key=lambda d: (-d.score, d.frame, d.row, d.col, d.level))


def curve_from_labels(scores, tp, n_gt: int) -> PRCurve:
    """PR curve from per-detection scores and TP flags.

    The first point (threshold +inf) has no detections: recall 0,
    precision 1 by convention.
    """
    if n_gt < 1:
        raise ValueError("precision-recall needs at least one ground-truth box")
    scores = np.asarray(scores, dtype=np.float64)
    tp = np.asarray(tp, dtype=bool)
    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    ctp = np.cumsum(tp[order])
    cfp = np.cumsum(~tp[order])
    # last index of every run of equal scores
    last = np.flatnonzero(np.r_[s[1:] != s[:-1], True]) if len(s) else np.array([], dtype=np.intp)
    thr = np.r_[np.inf, s[last]]
    n_tp = np.r_[0, ctp[last]].astype(np.int64)
    n_fp = np.r_[0, cfp[last]].astype(np.int64)
    n_det = n_tp + n_fp
    precision = np.divide(n_tp, n_det, out=np.ones(len(n_det)), where=n_det > 0)
    recall = n_tp / n_gt
    return PRCurve(thr, recall, precision, n_tp, n_fp, n_gt)


def pr_curve(detections, ground_truths, iou_threshold: float = 0.5) -> PRCurve:
    if not ground_truths:
        raise ValueError("precision-recall needs at least one ground-truth box")
    dets = sort_detections(detections)
    m = match_detections(dets, ground_truths, iou_threshold)
    return curve_from_labels([d.score for d in dets], m.tp, len(ground_truths))


def average_precision(curve: PRCurve) -> float:
    """Step integral of precision over recall, precision taken at the higher-recall end."""
    r = np.r_[0.0, curve.recall]
    return float(np.sum(np.diff(r) * curve.precision))


def avep_by_size(detections, ground_truths, size_bins, iou_threshold: float = 0.5):
    """AveP per ground-truth side bin ``[edge_k, edge_k+1)``.

    Matching is done once over everything. A matched detection belongs to
    its ground truth's bin; an unmatched one counts as a false positive in
    the bin its own side falls in. Bins without ground truth are omitted.
    """
    edges = np.asarray(size_bins, dtype=np.float64)
    if len(edges) < 2 or np.any(np.diff(edges) <= 0):
        raise ValueError("size bins must be strictly increasing edges")
    dets = sort_detections(detections)
    m = match_detections(dets, ground_truths, iou_threshold)
    gt_bin = np.searchsorted(edges, [g.side for g in ground_truths], side="right") - 1
    det_side_bin = np.searchsorted(edges, [d.side for d in dets], side="right") - 1
    out = []
    for b in range(len(edges) - 1):
        n_gt = int(np.sum(gt_bin == b))
        if n_gt == 0:
            continue
        keep = [n for n in range(len(dets))
                if (m.tp[n] and gt_bin[m.gt_index[n]] == b) or (not m.tp[n] and det_side_bin[n] == b)]
        curve = curve_from_labels([dets[n].score for n in keep], m.tp[keep], n_gt)
        out.append(((float(edges[b]), float(edges[b + 1])), average_precision(curve)))
    return out


# ---------------------------------------------------------------------------
# files

def read_ground_truth(path: str) -> list[GroundTruthBox]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [GroundTruthBox(int(r["frame"]), float(r["center_y"]), float(r["center_x"]), float(r["side"]))
            for r in rows]


def write_ground_truth(path: str, boxes) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("frame,center_x,center_y,side\n")
        for g in boxes:
            fh.write(f"{g.frame},{g.col:.6f},{g.row:.6f},{g.side:.6f}\n")


def read_detections(path: str) -> list[Detection]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [Detection(int(r["frame"]), float(r["center_y"]), float(r["center_x"]), float(r["side"]),
                      float(r["score"])) for r in rows]


def write_detections(path: str, detections) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("frame,center_x,center_y,side,score\n")
        for d in detections:
            fh.write(f"{d.frame},{d.col:.6f},{d.row:.6f},{d.side:.6f},{d.score:.6f}\n")


def write_pr_csv(path: str, curve: PRCurve) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("threshold,recall,precision\n")
        for t, r, p in zip(curve.thresholds, curve.recall, curve.precision):
            fh.write(f"{t:.6f},{r:.6f},{p:.6f}\n")


def summary(avep: float, curve: PRCurve, by_size=None) -> str:
    report = {
        "avep": round(avep, 6),
        "ground_truth": curve.n_gt,
        "detections": int(curve.tp[-1] + curve.fp[-1]),
        "true_positives": int(curve.tp[-1]),
    }
    if by_size is not None:
        report["by_size"] = [{"bin": list(b), "avep": round(v, 6)} for b, v in by_size]
    return json.dumps(report, indent=2, sort_keys=True)
