"""Discrete AdaBoost over thresholded cube features.

Two feature families are supported:

``energy``
    normalised orientation energy of a random box of the cube (one
    orientation bin, any sub-range of slices);
``hog3d``
    single components of the cube's 3D-HoG descriptor.

The ensemble score is ``sum(alpha_j * fires_j) / sum(max(alpha_j, 0))`` so
that it lies in [0, 1]; a score of 0.5 is the usual AdaBoost sign boundary.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numba
import numpy as np

from . import binio
from .features import CHANNEL_BINS, HogGeometry, box_energies, hog3d_batch, integrals_batch

log = logging.getLogger(__name__)

MAGIC = b"SWC1"
FEATURE_MODES = ("energy", "hog3d")
MIN_BOX_SIDE = 4
ERR_CLAMP = 1e-10
# SAT cache limit for training, in bytes
CACHE_BUDGET = 2_000_000_000
CHUNK = 128


@dataclass(frozen=True)
class WeakLearner:
    """``feature`` is a box ``(x0, x1, y0, y1, t0, t1, o)`` in energy mode or
    a 1-tuple component index in hog3d mode."""

    feature: tuple[int, ...]
    threshold: float
    polarity: int
    alpha: float

    def fires(self, values: np.ndarray) -> np.ndarray:
        if self.polarity > 0:
            return values > self.threshold
        return values <= self.threshold


@dataclass
class CubeClassifier:
    learners: list[WeakLearner]
    dims: tuple[int, int, int]
    feature_mode: str = "energy"
    bins: int = CHANNEL_BINS
    errors: list[float] = field(default_factory=list)
    train_errors: list[float] = field(default_factory=list)
    halted: bool = False

    def __post_init__(self):
        if not self.learners:
            raise ValueError("a classifier needs at least one weak learner")
        if self.feature_mode not in FEATURE_MODES:
            raise ValueError(f"unknown feature mode {self.feature_mode!r}")
        self.dims = tuple(int(d) for d in self.dims)

    @property
    def T(self) -> int:
        return len(self.learners)

    @property
    def fingerprint(self) -> str:
        s_x, s_y, s_t = self.dims
        return f"{self.feature_mode}:{s_x}x{s_y}x{s_t}:b{self.bins}"

    def bound(self) -> list[float]:
        """Running product of ``2 sqrt(e (1 - e))`` over the rounds."""
        z = 2.0 * np.sqrt(np.array(self.errors) * (1.0 - np.array(self.errors)))
        return np.cumprod(z).tolist()

    def feature_values(self, cubes: np.ndarray) -> np.ndarray:
        """Feature value of every learner on every cube: ``(N, T)``."""
        cubes = _as_array(cubes)
        _check_dims(cubes, self.dims)
        feats = np.array([lr.feature for lr in self.learners], dtype=np.intp)
        out = np.empty((len(cubes), self.T))
        for a in range(0, len(cubes), CHUNK):
            part = cubes[a:a + CHUNK]
            if self.feature_mode == "energy":
                out[a:a + CHUNK] = box_energies(integrals_batch(part, self.bins), feats)
            else:
                out[a:a + CHUNK] = hog3d_batch(part)[:, feats[:, 0]]
        return out

    def score_batch(self, cubes) -> np.ndarray:
        values = self.feature_values(cubes)
        alpha = np.array([lr.alpha for lr in self.learners])
        fires = np.column_stack([lr.fires(values[:, k]) for k, lr in enumerate(self.learners)])
        total = np.sum(np.maximum(alpha, 0.0))
        if total <= 0.0:
            return np.zeros(len(values))
        return np.clip(fires.astype(np.float64) @ alpha / total, 0.0, 1.0)

    def save(self, path: str) -> None:
        with open(path, "wb") as fh:
            fh.write(to_bytes(self))

    @classmethod
    def load(cls, path: str) -> "CubeClassifier":
        with open(path, "rb") as fh:
            return from_bytes(fh.read())


def _as_array(cubes) -> np.ndarray:
    if isinstance(cubes, np.ndarray):
        return cubes.astype(np.float64, copy=False)
    return np.stack([np.asarray(getattr(c, "pixels", c), dtype=np.float64) for c in cubes])


def _check_dims(cubes: np.ndarray, dims) -> None:
    s_x, s_y, s_t = dims
    if cubes.ndim != 4 or cubes.shape[1:] != (s_t, s_y, s_x):
        raise ValueError(f"cubes of shape {cubes.shape[1:]} do not match classifier dims {tuple(dims)}")


def score_cube(model: CubeClassifier, cube) -> float:
    return float(model.score_batch([cube])[0])


# ---------------------------------------------------------------------------
# candidate features

def _range_pairs(n: int, min_len: int) -> np.ndarray:
    return np.array([(a, b) for a in range(n) for b in range(a + min_len, n + 1)], dtype=np.intp)


def random_boxes(rng: np.random.Generator, dims, count: int, bins: int = CHANNEL_BINS,
                 min_side: int = MIN_BOX_SIDE) -> np.ndarray:
    """``(count, 7)`` boxes drawn uniformly over valid ranges and bins."""
    s_x, s_y, s_t = dims
    xs = _range_pairs(s_x, min(min_side, s_x))
    ys = _range_pairs(s_y, min(min_side, s_y))
    ts = _range_pairs(s_t, 1)
    x = xs[rng.integers(len(xs), size=count)]
    y = ys[rng.integers(len(ys), size=count)]
    t = ts[rng.integers(len(ts), size=count)]
    o = rng.integers(bins, size=count)
    return np.column_stack([x, y, t, o]).astype(np.intp)


class _EnergyPool:
    """Energy values of arbitrary boxes over a fixed training set."""

    def __init__(self, cubes: np.ndarray, bins: int):
        self.cubes = cubes
        self.bins = bins
        per_cube = (bins + 1) * np.prod(np.array(cubes.shape[1:]) + 1) * 8
        self.cache = None
        if per_cube * len(cubes) <= CACHE_BUDGET:
            self.cache = [integrals_batch(cubes[a:a + CHUNK], bins) for a in range(0, len(cubes), CHUNK)]

    def values(self, boxes: np.ndarray) -> np.ndarray:
        out = np.empty((len(self.cubes), len(boxes)))
        for k, a in enumerate(range(0, len(self.cubes), CHUNK)):
            sat = self.cache[k] if self.cache is not None else integrals_batch(self.cubes[a:a + CHUNK], self.bins)
            out[a:a + CHUNK] = box_energies(sat, boxes)
        return out


@numba.njit(cache=True, nogil=True)
def _stump_kernel(columns, orders, y, w, wneg, total):
    k, n = columns.shape
    best_err, best_col, best_pol = np.inf, 0, 0
    best_thr = 0.0
    for col in range(k):
        v = columns[col]
        order = orders[col]
        acc = wneg
        for p in range(n):
            i = order[p]
            acc += w[i] * y[i]
            last = p == n - 1
            if not last and not v[i] < v[order[p + 1]]:
                continue
            # polarity +1 fires above the threshold, -1 at or below it
            for pol in range(2):
                e = acc if pol == 0 else total - acc
                if e < best_err:
                    best_err, best_col, best_pol = e, col, pol
                    lo = v[i]
                    if last:
                        best_thr = lo
                    else:
                        hi = v[order[p + 1]]
                        thr = lo + (hi - lo) / 2.0
                        best_thr = thr if lo <= thr < hi else lo
    return best_err, best_col, best_thr, best_pol


def best_stump(values: np.ndarray, y: np.ndarray, w: np.ndarray):
    """Lowest weighted-error threshold stump over each column of ``values``.

    Thresholds sit midway between consecutive distinct sorted values, plus
    the column maximum. Returns ``(error, column, threshold, polarity)``;
    ties go to the lowest column, then the lowest threshold, then polarity
    +1.
    """
    y = np.asarray(y, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    wneg = float(np.sum(w[y < 0]))
    total = float(np.sum(w))
    cols = np.ascontiguousarray(np.asarray(values, dtype=np.float64).T)
    # order among equal values never matters: only gaps between distinct values are split points
    orders = np.argsort(cols, axis=1)
    err, col, thr, pol = _stump_kernel(cols, orders, y, w, wneg, total)
    return float(err), int(col), float(thr), 1 if pol == 0 else -1


def train_adaboost(cubes, labels, T: int = 100, pool_size: int = 2000, seed: int = 0,
                   feature_mode: str = "energy", bins: int = CHANNEL_BINS) -> CubeClassifier:
    """Discrete AdaBoost; a fresh random candidate pool is drawn every round."""
    if T < 1:
        raise ValueError("T must be >= 1")
    if feature_mode not in FEATURE_MODES:
        raise ValueError(f"unknown feature mode {feature_mode!r}")
    data = _as_array(cubes)
    y = np.asarray(labels, dtype=np.float64)
    if data.ndim != 4 or len(data) != len(y):
        raise ValueError("need one label per cube")
    if not (np.any(y > 0) and np.any(y < 0)):
        raise ValueError("training needs both positive and negative cubes")
    y = np.where(y > 0, 1.0, -1.0)
    s_t, s_y, s_x = data.shape[1:]
    dims = (s_x, s_y, s_t)
    rng = np.random.default_rng(seed)

    if feature_mode == "energy":
        pool = _EnergyPool(data, bins)
    else:
        descriptors = hog3d_batch(data, HogGeometry(temporal=True))
        n_comp = descriptors.shape[1]

    w = np.full(len(y), 1.0 / len(y))
    margin = np.zeros(len(y))
    learners, errors, train_errors = [], [], []
    halted = False
    for _ in range(T):
        if feature_mode == "energy":
            cands = random_boxes(rng, dims, pool_size, bins)
            values = pool.values(cands)
        else:
            if pool_size >= n_comp:
                comp = np.arange(n_comp)
            else:
                comp = np.sort(rng.choice(n_comp, size=pool_size, replace=False))
            cands = comp[:, None]
            values = descriptors[:, comp]
        err, col, thr, pol = best_stump(values, y, w)
        eps = min(max(err, ERR_CLAMP), 1.0 - ERR_CLAMP)
        degenerate = err >= 0.5 - 1e-12
        alpha = 0.0 if degenerate else 0.5 * np.log((1.0 - eps) / eps)
        learner = WeakLearner(tuple(int(v) for v in cands[col]), thr, pol, float(alpha))
        learners.append(learner)
        errors.append(eps if not degenerate else 0.5)
        h = np.where(learner.fires(values[:, col]), 1.0, -1.0)
        margin += alpha * h
        # ties count as mistakes so the exponential-loss bound stays valid
        train_errors.append(float(np.mean(y * margin <= 0.0)))
        if degenerate:
            log.warning("no weak learner beats chance (weighted error %.6f); stopping after %d rounds",
                        err, len(learners))
            halted = True
            break
        w = w * np.exp(-alpha * y * h)
        w /= w.sum()
    return CubeClassifier(learners, dims, feature_mode, bins, errors, train_errors, halted)


# ---------------------------------------------------------------------------
# serialization

def to_bytes(model: CubeClassifier) -> bytes:
    w = binio.Writer(MAGIC)
    w.header({
        "fingerprint": model.fingerprint,
        "dims": list(model.dims),
        "feature_mode": model.feature_mode,
        "bins": model.bins,
        "halted": model.halted,
    })
    width = max(len(lr.feature) for lr in model.learners)
    feats = np.array([lr.feature for lr in model.learners], dtype=np.int64).reshape(-1, width)
    w.array(feats)
    w.array(np.array([lr.threshold for lr in model.learners]))
    w.array(np.array([lr.polarity for lr in model.learners], dtype=np.int64))
    w.array(np.array([lr.alpha for lr in model.learners]))
    w.array(np.array(model.errors, dtype=np.float64))
    w.array(np.array(model.train_errors, dtype=np.float64))
    return w.getvalue()


def from_bytes(data: bytes) -> CubeClassifier:
    r = binio.Reader(data, MAGIC)
    head = r.header()
    feats, thr, pol, alpha = r.array(), r.array(), r.array(), r.array()
    errors, train_errors = r.array().tolist(), r.array().tolist()
    r.done()
    learners = [WeakLearner(tuple(int(v) for v in feats[k]), float(thr[k]), int(pol[k]), float(alpha[k]))
                for k in range(len(thr))]
    model = CubeClassifier(learners, tuple(head["dims"]), head["feature_mode"], head["bins"],
                           errors, train_errors, head["halted"])
    if model.fingerprint != head["fingerprint"]:
        raise binio.FormatError("dims fingerprint does not match stored dims")
    return model
