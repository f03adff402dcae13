"""Slow, loop-based reference implementations used only by the tests.

Each one recomputes a quantity from first principles without touching the
vectorised or compiled code paths of the package.
"""

import math

import numpy as np


def gradient_at(img, r, c):
    h, w = len(img), len(img[0])
    if c == 0:
        gx = img[r][1] - img[r][0]
    elif c == w - 1:
        gx = img[r][c] - img[r][c - 1]
    else:
        gx = (img[r][c + 1] - img[r][c - 1]) / 2.0
    if r == 0:
        gy = img[1][c] - img[0][c]
    elif r == h - 1:
        gy = img[r][c] - img[r - 1][c]
    else:
        gy = (img[r + 1][c] - img[r - 1][c]) / 2.0
    return gx, gy


def nearest_bin(gx, gy, bins):
    """Nearest of ``bins`` unsigned orientation centres ``k * pi / bins``."""
    if gx == 0.0 and gy == 0.0:
        return 0
    theta = math.atan2(gy, gx)
    if theta < 0:
        theta += math.pi
    if theta >= math.pi:
        theta -= math.pi
    best, best_d = 0, float("inf")
    for k in range(bins):
        d = abs(theta - k * math.pi / bins)
        d = min(d, math.pi - d)
        if d < best_d:
            best, best_d = k, d
    return best


def hog(patch, cell=8, block=2, bins=9, clip=0.2, eps=1e-6, temporal_slices=None):
    """Per-pixel HoG; ``temporal_slices`` (a list of 2-D slices) switches to 3D-HoG."""
    slices = temporal_slices if temporal_slices is not None else [patch]
    h, w = len(slices[0]), len(slices[0][0])
    cy, cx = h // cell, w // cell
    nb = bins + (2 if temporal_slices is not None else 0)
    cells = [[[0.0] * nb for _ in range(cx)] for _ in range(cy)]
    for t, img in enumerate(slices):
        img = [list(map(float, row)) for row in img]
        for r in range(h):
            for c in range(w):
                gx, gy = gradient_at(img, r, c)
                cells[r // cell][c // cell][nearest_bin(gx, gy, bins)] += math.hypot(gx, gy)
                if temporal_slices is not None and t > 0:
                    d = img[r][c] - float(slices[t - 1][r][c])
                    if d > 0:
                        cells[r // cell][c // cell][bins] += d
                    elif d < 0:
                        cells[r // cell][c // cell][bins + 1] += -d
    out = []
    for i in range(cy - block + 1):
        for j in range(cx - block + 1):
            v = []
            for dy in range(block):
                for dx in range(block):
                    v.extend(cells[i + dy][j + dx])
            n = math.sqrt(sum(x * x for x in v)) + eps
            v = [min(x / n, clip) for x in v]
            n = math.sqrt(sum(x * x for x in v)) + eps
            out.extend(x / n for x in v)
    return np.array(out)


def energy(cube, box, bins=8, floor=1e-12):
    """Direct triple loop over the box: orientation-``o`` magnitude / total magnitude."""
    x0, x1, y0, y1, t0, t1, o = box
    num = den = 0.0
    for t in range(t0, t1):
        img = [list(map(float, row)) for row in cube[t]]
        for r in range(y0, y1):
            for c in range(x0, x1):
                gx, gy = gradient_at(img, r, c)
                m = math.hypot(gx, gy)
                den += m
                if nearest_bin(gx, gy, bins) == o:
                    num += m
    return 0.0 if den < floor else num / den


def square_iou(a, b):
    """IoU of (row, col, side) squares via explicit corners."""
    a_top, a_left = a[0] - a[2] / 2, a[1] - a[2] / 2
    b_top, b_left = b[0] - b[2] / 2, b[1] - b[2] / 2
    top, left = max(a_top, b_top), max(a_left, b_left)
    bottom = min(a_top + a[2], b_top + b[2])
    right = min(a_left + a[2], b_left + b[2])
    if bottom <= top or right <= left:
        return 0.0
    inter = (bottom - top) * (right - left)
    return inter / (a[2] ** 2 + b[2] ** 2 - inter)


def nms(dets, overlap):
    """O(n^2) greedy suppression, one frame at a time."""
    order = sorted(dets, key=lambda d: (-d.score, d.row, d.col, d.level))
    kept = []
    for d in order:
        if all(k.frame != d.frame or square_iou((k.row, k.col, k.side), (d.row, d.col, d.side)) <= overlap
               for k in kept):
            kept.append(d)
    return kept


def greedy_match(dets_sorted, gts, iou_threshold=0.5, owners=None):
    """TP flags in ranked order; ``owners`` (a list) receives each matched GT index or -1."""
    used = set()
    labels = []
    for d in dets_sorted:
        best, best_iou = None, -1.0
        for k, g in enumerate(gts):
            if k in used or g.frame != d.frame:
                continue
            v = square_iou((d.row, d.col, d.side), (g.row, g.col, g.side))
            if v > best_iou:
                best, best_iou = k, v
        if best is not None and best_iou >= iou_threshold:
            used.add(best)
            labels.append(True)
        else:
            labels.append(False)
        if owners is not None:
            owners.append(best if labels[-1] else -1)
    return labels


def average_precision(scores, labels, n_gt):
    """Dense threshold sweep: the k-th recall level (k = 1..n_gt) is credited
    with the precision at the highest threshold whose detections reach k
    true positives; unreached levels earn nothing."""
    thresholds = sorted(set(scores), reverse=True)
    total = 0.0
    k = 1
    for thr in thresholds:
        kept = [lab for s, lab in zip(scores, labels) if s >= thr]
        tp = sum(kept)
        precision = tp / len(kept)
        while k <= n_gt and tp >= k:
            total += precision / n_gt
            k += 1
    return total


def pyramid_level_count(width, height, step=0.8, min_side=40):
    k = 0
    while min(round(width * step ** (k + 1)), round(height * step ** (k + 1))) >= min_side:
        k += 1
    return k + 1


def best_stump(values, y, w, exclude=None):
    """Exhaustive stump search with the same candidate thresholds and tie order;
    ``exclude`` drops one ``(column, threshold, polarity)`` candidate."""
    values = np.asarray(values, dtype=float)
    best = (float("inf"), -1, 0.0, 0)
    for col in range(values.shape[1]):
        v = values[:, col]
        u = sorted(set(v.tolist()))
        thresholds = [(a + b) / 2 for a, b in zip(u, u[1:])] + [u[-1]]
        for thr in sorted(thresholds):
            for pol in (1, -1):
                if exclude is not None and (col, thr, pol) == tuple(exclude):
                    continue
                fires = v > thr if pol > 0 else v <= thr
                pred = np.where(fires, 1.0, -1.0)
                err = float(sum(wi for wi, pi, yi in zip(w, pred, y) if pi != yi))
                if err < best[0] - 1e-15:
                    best = (err, col, thr, pol)
    return best


def classifier_score(learners, cube, bins=8):
    """Normalised boosted vote with every energy recomputed by ``energy``."""
    num = 0.0
    for lr in learners:
        e = energy(cube, lr.feature, bins)
        fires = e > lr.threshold if lr.polarity > 0 else e <= lr.threshold
        num += lr.alpha * fires
    total = sum(max(lr.alpha, 0.0) for lr in learners)
    return 0.0 if total <= 0 else min(max(num / total, 0.0), 1.0)
