"""Training-set assembly shared by the command line and the benchmarks.

A training set is a list of sequences, each a ``(frames, ground_truth)``
pair; the benchmark protocol trains on several generator seeds and tests
on a held-out one.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np

from .cube_classifier import CubeClassifier, train_adaboost
from .detector import DetectorConfig, frame_levels, grid_centers
from .evalkit import iou_matrix
from .imagecore import from_level, rescale_image, to_level
from .motion_comp import compensate_batch
from .shift_regressor import (RegressorConfig, ShiftRegressor, ShiftSample, make_shift_samples,
                              train_regressor)
from .synthgen import SynthConfig, generate_sequence, load_config

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainingConfig:
    shifts_per_box: int = 9
    max_shift: float = 10.0
    regressor_seed: int = 1
    positive_jitter: int = 2
    negatives_per_positive: float = 2.0
    rounds: int = 200
    pool_size: int = 2000
    classifier_seed: int = 2
    feature_mode: str = "energy"


def annotations_of(gts) -> list:
    return [(g.frame, (g.row, g.col), g.side) for g in gts]


def shift_samples(sequences, train: TrainingConfig = TrainingConfig()) -> list[ShiftSample]:
    samples = []
    for k, (frames, gts) in enumerate(sequences):
        samples += make_shift_samples(annotations_of(gts), frames, train.regressor_seed + 7919 * k,
                                      train.shifts_per_box, max_shift=train.max_shift)
    return samples


def fit_regressor(sequences, train: TrainingConfig = TrainingConfig(),
                  config: RegressorConfig = RegressorConfig()) -> ShiftRegressor:
    samples = shift_samples(sequences, train)
    log.info("training shift regressor on %d samples", len(samples))
    return train_regressor(samples, config)


def _compensated(jobs, regressor, det: DetectorConfig) -> list[np.ndarray]:
    """``jobs`` are ``(stack, anchor)``; stacks shared by identity are batched."""
    s_x, s_y, _ = det.dims
    reg = regressor if det.compensation else None
    groups: dict[int, tuple[np.ndarray, list[int]]] = {}
    for n, (stack, _) in enumerate(jobs):
        groups.setdefault(id(stack), (stack, []))[1].append(n)
    out: list[np.ndarray | None] = [None] * len(jobs)
    for stack, members in groups.values():
        anchors = np.array([jobs[n][1] for n in members])
        pix, _, _, _ = compensate_batch(stack, anchors, reg, det.eps, det.max_iter, (s_x, s_y))
        for k, n in enumerate(members):
            out[n] = pix[k]
    return out


def positive_cubes(frames, gts, regressor: ShiftRegressor | None, det: DetectorConfig,
                   jitter: int, rng: np.random.Generator) -> np.ndarray:
    """Cubes around every ground-truth box that ends a full cube.

    Scale and position are perturbed within one pyramid step and half a
    stride, the range a sliding window lands in.
    """
    s_x, _, s_t = det.dims
    jobs = []
    for g in gts:
        if g.frame < s_t - 1:
            continue
        for _ in range(jitter):
            scale = s_x / g.side * det.scale_step ** rng.uniform(-0.5, 0.5)
            stack = np.stack([rescale_image(frames[z].pixels, scale)
                              for z in range(g.frame - s_t + 1, g.frame + 1)])
            anchor = to_level([g.row, g.col], scale) + rng.uniform(-det.stride / 2, det.stride / 2, 2)
            jobs.append((stack, anchor))
    if not jobs:
        return np.empty((0, s_t, det.cube_y, s_x))
    return np.stack(_compensated(jobs, regressor, det))


def negative_cubes(frames, gts, regressor: ShiftRegressor | None, det: DetectorConfig,
                   count: int, rng: np.random.Generator, max_overlap: float = 0.3) -> np.ndarray:
    """Uniformly drawn sliding windows overlapping no ground truth by more than ``max_overlap``."""
    s_x, s_y, s_t = det.dims
    frames = list(frames)
    if count <= 0:
        return np.empty((0, s_t, s_y, s_x))
    gt_by_frame: dict[int, list] = {}
    for g in gts:
        gt_by_frame.setdefault(g.frame, []).append((g.row, g.col, g.side))
    levels = [frame_levels(f, det) for f in frames]
    stacks: dict[tuple[int, int], np.ndarray] = {}
    jobs = []
    attempts = 0
    while len(jobs) < count:
        attempts += 1
        if attempts > 50 * count:
            raise RuntimeError("could not draw enough background windows")
        t = int(rng.integers(s_t - 1, len(frames)))
        lvl = int(rng.integers(len(levels[t])))
        scale = levels[t][lvl][1]
        centers = grid_centers(*levels[t][lvl][0].shape, det)
        if not len(centers):
            continue
        c = centers[int(rng.integers(len(centers)))]
        orig = from_level(c, scale)
        box = np.array([[orig[0], orig[1], s_x / scale]])
        if t in gt_by_frame and np.max(iou_matrix(box, np.array(gt_by_frame[t]))) > max_overlap:
            continue
        if (t, lvl) not in stacks:
            stacks[t, lvl] = np.stack([levels[z][lvl][0] for z in range(t - s_t + 1, t + 1)])
        jobs.append((stacks[t, lvl], c))
    return np.stack(_compensated(jobs, regressor, det))


def training_cubes(sequences, regressor: ShiftRegressor | None, det: DetectorConfig,
                   train: TrainingConfig = TrainingConfig()):
    """Labelled cubes (+1 target, -1 background) from every sequence."""
    cubes, labels = [], []
    for k, (frames, gts) in enumerate(sequences):
        rng = np.random.default_rng([train.classifier_seed, k])
        frames = list(frames)
        pos = positive_cubes(frames, gts, regressor, det, train.positive_jitter, rng)
        n_neg = int(round(max(len(pos), 1) * train.negatives_per_positive))
        neg = negative_cubes(frames, gts, regressor, det, n_neg, rng)
        cubes += [pos, neg]
        labels += [np.ones(len(pos)), -np.ones(len(neg))]
    return np.concatenate(cubes), np.concatenate(labels)


def fit_classifier(sequences, regressor: ShiftRegressor | None, det: DetectorConfig,
                   train: TrainingConfig = TrainingConfig()) -> CubeClassifier:
    cubes, labels = training_cubes(sequences, regressor, det, train)
    log.info("training %s classifier on %d cubes (%d positive)", train.feature_mode,
             len(cubes), int(np.sum(labels > 0)))
    return train_adaboost(cubes, labels, train.rounds, train.pool_size, train.classifier_seed,
                          train.feature_mode)


def compensation_trials(frames, gts, regressor: ShiftRegressor, rng: np.random.Generator,
                        cube_t: int = 4, eps: float = 1.0, max_iter: int = 10, offset: float = 8.0,
                        boxes=None) -> list[dict]:
    """Re-centre ground-truth cubes started from a displaced anchor.

    Each cube ends at a ground-truth box, is cut at the box's scale, and
    starts ``uniform(-offset, offset)`` patch pixels away on each axis. The
    object's true centre in earlier slices is the nearest ground truth of
    similar size. Errors are in patch pixels. ``boxes`` restricts the
    trials to those ground-truth indices (repeats allowed).
    """
    s_x, _ = regressor.patch_size
    by_frame: dict[int, list] = {}
    for g in gts:
        by_frame.setdefault(g.frame, []).append(g)
    by_index = {f.index: f for f in frames}
    out = []
    for k in (range(len(gts)) if boxes is None else boxes):
        g = gts[k]
        window = range(g.frame - cube_t + 1, g.frame + 1)
        if window.start < 0 or any(z not in by_index or z not in by_frame for z in window):
            continue
        scale = s_x / g.side
        truth = []
        for z in window:
            best = min(by_frame[z], key=lambda c: (c.row - g.row) ** 2 + (c.col - g.col) ** 2
                       + (c.side - g.side) ** 2)
            truth.append(to_level([best.row, best.col], scale))
        truth = np.array(truth)
        stack = np.stack([rescale_image(by_index[z].pixels, scale) for z in window])
        anchor = to_level([g.row, g.col], scale) + rng.uniform(-offset, offset, 2)
        _, centers, conv, calls = compensate_batch(stack, anchor[None], regressor, eps, max_iter,
                                                   regressor.patch_size)
        pre = float(np.mean(np.linalg.norm(truth - anchor, axis=1)))
        post = float(np.mean(np.linalg.norm(truth - centers[0], axis=1)))
        out.append({
            "frame": g.frame, "center_x": g.col, "center_y": g.row, "side": g.side,
            "pre_error_px": round(pre, 6), "post_error_px": round(post, 6),
            "converged_slices": int(conv[0].sum()), "regressor_calls": int(calls[0].sum()),
        })
    return out


def compensation_summary(trials: list[dict], cube_t: int) -> dict:
    if not trials:
        raise RuntimeError("no ground-truth box ends a full cube")
    pre = np.array([c["pre_error_px"] for c in trials])
    post = np.array([c["post_error_px"] for c in trials])
    return {
        "cubes": len(trials),
        "mean_pre_error_px": round(float(pre.mean()), 6),
        "mean_post_error_px": round(float(post.mean()), 6),
        "converged_slice_fraction": round(sum(c["converged_slices"] for c in trials)
                                          / (len(trials) * cube_t), 6),
        "halved_fraction": round(float(np.mean(2 * post <= pre)), 6),
    }


def benchmark_sequences(name: str, seed: int, n_train: int, train_frames: int | None = None,
                        **overrides):
    """``(train, test)`` for a shipped benchmark.

    The test sequence uses ``seed``; the ``n_train`` training sequences use
    the seeds after it and, if given, ``train_frames`` frames each (many
    short sequences give more distinct targets per training cube).
    """
    base: SynthConfig = load_config(name, **overrides)
    test = generate_sequence(replace(base, seed=seed))
    short = replace(base, frames=train_frames) if train_frames else base
    train = [generate_sequence(replace(short, seed=seed + 1 + k)) for k in range(n_train)]
    return [(f, g) for f, g, _ in train], (test[0], test[1])
