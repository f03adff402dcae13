"""Multi-scale sliding-window detection over spatio-temporal cubes."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, fields, replace

import numpy as np

from .cube_classifier import CubeClassifier
from .evalkit import Detection, iou_matrix, sort_detections
from .imagecore import from_level, image_pyramid
from .motion_comp import compensate_batch
from .shift_regressor import ShiftRegressor

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class DetectorConfig:
    cube_x: int = 40
    cube_y: int = 40
    cube_t: int = 4
    stride: int = 8
    scale_step: float = 0.8
    min_side: int = 40
    upsample: bool = True
    threshold: float = 0.5
    nms_overlap: float = 0.3
    compensation: bool = True
    eps: float = 1.0
    max_iter: int = 10
    threads: int = 1

    @property
    def dims(self) -> tuple[int, int, int]:
        return (self.cube_x, self.cube_y, self.cube_t)

    def validate(self) -> None:
        ints = (self.cube_x, self.cube_y, self.cube_t, self.stride, self.min_side, self.max_iter, self.threads)
        if min(ints) < 1 or self.eps <= 0:
            raise ValueError("detector sizes, counts and eps must be positive")
        if not 0.0 < self.scale_step < 1.0:
            raise ValueError("scale_step must lie in (0, 1)")
        if not 0.0 <= self.threshold <= 1.0 or not 0.0 <= self.nms_overlap <= 1.0:
            raise ValueError("threshold and nms_overlap must lie in [0, 1]")

    @classmethod
    def from_options(cls, options: dict) -> "DetectorConfig":
        known = {f.name: f.type for f in fields(cls)}
        values = {}
        for key, raw in options.items():
            name = key.replace("-", "_")
            if name not in known:
                raise KeyError(key)
            kind = known[name]
            if kind == "bool":
                values[name] = str(raw).lower() in ("1", "true", "yes", "on")
            elif kind == "int":
                values[name] = int(raw)
            else:
                values[name] = float(raw)
        cfg = replace(cls(), **values)
        cfg.validate()
        return cfg


def level_scales(config: DetectorConfig, height: int, width: int) -> list[float]:
    base = 2.0 if config.upsample else 1.0
    out = []
    k = 0
    while True:
        s = base * config.scale_step ** k
        h, w = int(round(height * s)), int(round(width * s))
        if min(h, w) < config.min_side:
            break
        out.append(s)
        k += 1
    return out or [1.0]


def frame_levels(frame, config: DetectorConfig) -> list[tuple[np.ndarray, float]]:
    base = 2.0 if config.upsample else 1.0
    return [(f.pixels, s) for f, s in image_pyramid(frame, config.scale_step, config.min_side, base)
            if min(f.pixels.shape) >= config.min_side] or [(frame.pixels, 1.0)]


def grid_centers(height: int, width: int, config: DetectorConfig) -> np.ndarray:
    """Window centres (row, col) with the whole window inside the level."""
    s_x, s_y = config.cube_x, config.cube_y
    rows = np.arange(s_y // 2, height - (s_y - s_y // 2) + 1, config.stride)
    cols = np.arange(s_x // 2, width - (s_x - s_x // 2) + 1, config.stride)
    rr, cc = np.meshgrid(rows, cols, indexing="ij")
    return np.column_stack([rr.ravel(), cc.ravel()]).astype(np.float64)


def nms(detections, overlap_threshold: float = 0.3) -> list[Detection]:
    """Greedy per-frame suppression of boxes overlapping a better one by IoU > threshold."""
    kept = []
    by_frame: dict[int, list[Detection]] = {}
    for d in detections:
        by_frame.setdefault(d.frame, []).append(d)
    for frame in sorted(by_frame):
        dets = sorted(by_frame[frame], key=lambda d: (-d.score, d.row, d.col, d.level))
        boxes = np.array([(d.row, d.col, d.side) for d in dets])
        ious = iou_matrix(boxes, boxes)
        alive = np.ones(len(dets), dtype=bool)
        for n in range(len(dets)):
            if not alive[n]:
                continue
            kept.append(dets[n])
            alive[n + 1:] &= ious[n, n + 1:] <= overlap_threshold
    return sort_detections(kept)


def check_models(regressor: ShiftRegressor | None, classifier: CubeClassifier, config: DetectorConfig) -> None:
    if tuple(classifier.dims) != config.dims:
        raise ValueError(f"classifier dims {classifier.dims} do not match detector dims {config.dims}")
    if config.compensation:
        if regressor is None:
            raise ValueError("compensation needs a shift regressor")
        if tuple(regressor.patch_size) != (config.cube_x, config.cube_y):
            raise ValueError(f"regressor patch size {regressor.patch_size} does not match cube "
                             f"{config.cube_x}x{config.cube_y}")


def _frame_candidates(levels, t: int, regressor, classifier, config: DetectorConfig,
                      height: int, width: int) -> list[Detection]:
    s_t = config.cube_t
    out = []
    for lvl in range(len(levels[t])):
        scale = levels[t][lvl][1]
        stack = np.stack([levels[z][lvl][0] for z in range(t - s_t + 1, t + 1)])
        anchors = grid_centers(stack.shape[1], stack.shape[2], config)
        if not len(anchors):
            continue
        reg = regressor if config.compensation else None
        pix, centers, _, _ = compensate_batch(stack, anchors, reg, config.eps, config.max_iter,
                                              (config.cube_x, config.cube_y))
        scores = classifier.score_batch(pix)
        side = config.cube_x / scale
        for n in np.flatnonzero(scores >= config.threshold):
            orig = from_level(centers[n], scale)
            row, col = float(orig[-1, 0]), float(orig[-1, 1])
            if not (-side / 2 < row < height - 1 + side / 2 and -side / 2 < col < width - 1 + side / 2):
                continue
            k = np.arange(s_t) - (s_t - 1) / 2
            vel = k @ (orig - orig.mean(axis=0)) / float(k @ k) if s_t > 1 else np.zeros(2)
            out.append(Detection(t, row, col, side, float(scores[n]), lvl, (float(vel[0]), float(vel[1]))))
    return out


def detect(frames, regressor: ShiftRegressor | None, classifier: CubeClassifier,
           config: DetectorConfig = DetectorConfig()) -> list[Detection]:
    """Detections over every frame that ends a full cube, NMS'd per frame, best first.

    With compensation the reported centre is the corrected centre of the
    cube's last slice; otherwise it is the window centre.
    """
    config.validate()
    check_models(regressor, classifier, config)
    frames = list(frames)
    if len(frames) < config.cube_t:
        raise ValueError(f"need at least {config.cube_t} frames, got {len(frames)}")
    height, width = frames[0].pixels.shape
    levels = [frame_levels(f, config) for f in frames]

    def work(t):
        return _frame_candidates(levels, t, regressor, classifier, config, height, width)

    ts = range(config.cube_t - 1, len(frames))
    if config.threads > 1:
        with ThreadPoolExecutor(config.threads) as pool:
            per_frame = list(pool.map(work, ts))
    else:
        per_frame = [work(t) for t in ts]
    cands = [d for group in per_frame for d in group]
    # frame indices follow sequence position
    cands = [replace(d, frame=frames[d.frame].index) for d in cands]
    return nms(cands, config.nms_overlap)
