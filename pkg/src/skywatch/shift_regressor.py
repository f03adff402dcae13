"""Boosted regression trees predicting where the object sits relative to a patch.

Two ensembles are trained on HoG descriptors of 40x40 patches, one per axis.
The regression target is the displacement of the patch centre from the
object centre (``patch - object``), so subtracting a prediction from the
patch centre moves the patch onto the object.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, asdict

import numba
import numpy as np

from . import binio
from .features import HogGeometry, hog_batch
from .imagecore import Patch, extract_patches, rescale_image

log = logging.getLogger(__name__)

PATCH_SIZE = (40, 40)
MAGIC = b"SWR1"


@dataclass(frozen=True)
class RegressorConfig:
    rounds: int = 200
    max_depth: int = 4
    shrinkage: float = 0.1
    min_leaf: int = 5

    def validate(self) -> None:
        if self.rounds < 1:
            raise ValueError("rounds must be >= 1")
        if self.max_depth < 0 or self.min_leaf < 1:
            raise ValueError("max_depth must be >= 0 and min_leaf >= 1")
        if not 0.0 < self.shrinkage <= 1.0:
            raise ValueError("shrinkage must lie in (0, 1]")


@dataclass
class RegressionTree:
    """Array-encoded binary tree; a sample goes left when ``x[feature] <= threshold``.

    Leaves have ``feature == -1``.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    max_depth: int

    def predict(self, X: np.ndarray) -> np.ndarray:
        out = np.empty(len(X))
        _forest_kernel(np.ascontiguousarray(X, dtype=np.float64), self.feature, self.threshold,
                       self.left, self.right, self.value, np.zeros(1, dtype=np.int64),
                       np.ones(1), 0.0, out)
        return out

    @property
    def n_nodes(self) -> int:
        return len(self.feature)


@dataclass
class Ensemble:
    base_value: float
    trees: list[RegressionTree]
    weights: list[float]
    shrinkage: float
    loss_history: list[float] = field(default_factory=list)
    _packed: tuple | None = field(default=None, init=False, repr=False, compare=False)

    def _pack(self) -> tuple:
        if self._packed is None or self._packed[0] != len(self.trees):
            sizes = [t.n_nodes for t in self.trees]
            offsets = (np.cumsum(sizes) - sizes).astype(np.int64)

            def cat(name, shift=False):
                parts = [getattr(t, name) + (o if shift else 0) for t, o in zip(self.trees, offsets)]
                return np.concatenate(parts) if parts else np.zeros(0)

            feature = cat("feature").astype(np.int64)
            left = np.where(feature >= 0, cat("left", True), -1).astype(np.int64)
            right = np.where(feature >= 0, cat("right", True), -1).astype(np.int64)
            coef = np.array([self.shrinkage * a for a in self.weights], dtype=np.float64)
            self._packed = (len(self.trees), feature, cat("threshold").astype(np.float64), left, right,
                            cat("value").astype(np.float64), offsets, coef)
        return self._packed

    def predict(self, X: np.ndarray) -> np.ndarray:
        _, feature, threshold, left, right, value, roots, coef = self._pack()
        out = np.empty(len(X))
        _forest_kernel(np.ascontiguousarray(X, dtype=np.float64), feature, threshold, left, right,
                       value, roots, coef, float(self.base_value), out)
        return out


@numba.njit(cache=True, nogil=True)
def _forest_kernel(X, feature, threshold, left, right, value, roots, coef, base, out):
    for n in range(X.shape[0]):
        acc = base
        for k in range(roots.shape[0]):
            node = roots[k]
            while feature[node] >= 0:
                if X[n, feature[node]] <= threshold[node]:
                    node = left[node]
                else:
                    node = right[node]
            acc += coef[k] * value[node]
        out[n] = acc


@dataclass
class ShiftRegressor:
    horizontal: Ensemble
    vertical: Ensemble
    config: RegressorConfig
    patch_size: tuple[int, int] = PATCH_SIZE
    geometry: HogGeometry = HogGeometry()

    @property
    def fingerprint(self) -> str:
        return self.geometry.fingerprint(*self.patch_size)

    def predict_batch(self, pixels: np.ndarray) -> np.ndarray:
        """Shifts ``(N, 2)`` as (sh_h, sh_v) for patches ``(N, s_y, s_x)``."""
        pixels = np.asarray(pixels, dtype=np.float64)
        if pixels.shape[1:] != (self.patch_size[1], self.patch_size[0]):
            raise ValueError(f"patches of shape {pixels.shape[1:]} do not match "
                             f"regressor geometry {self.fingerprint}")
        X = hog_batch(pixels, self.geometry)
        return self.predict_descriptors(X)

    def predict_descriptors(self, X: np.ndarray) -> np.ndarray:
        s_x, s_y = self.patch_size
        sh_h = np.clip(self.horizontal.predict(X), -s_x / 2, s_x / 2)
        sh_v = np.clip(self.vertical.predict(X), -s_y / 2, s_y / 2)
        return np.stack([sh_h, sh_v], axis=1)

    def save(self, path: str) -> None:
        with open(path, "wb") as fh:
            fh.write(to_bytes(self))

    @classmethod
    def load(cls, path: str) -> "ShiftRegressor":
        with open(path, "rb") as fh:
            return from_bytes(fh.read())


@dataclass(frozen=True)
class ShiftSample:
    patch: Patch
    r_h: float
    r_v: float


# ---------------------------------------------------------------------------
# sample generation

def make_shift_samples(annotations, frames, seed: int, shifts_per_box: int,
                       patch_size: tuple[int, int] = PATCH_SIZE,
                       max_shift: float | None = None,
                       every: int = 2) -> list[ShiftSample]:
    """Randomly displaced patches around annotated objects.

    ``annotations`` yields ``(frame_index, (row, col), side)``. Only frames
    with ``frame_index % every == 0`` are used. Each box is rescaled so its
    side maps onto the patch side; the patch centre is then displaced by a
    uniform draw in ``[-max_shift, max_shift]^2`` (patch pixels, default
    half the patch) and the displacement is the regression target.
    """
    s_x, s_y = patch_size
    if max_shift is None:
        max_shift = min(s_x, s_y) / 2
    rng = np.random.default_rng(seed)
    by_index = {f.index: f for f in frames}
    cache: dict[tuple[int, float], np.ndarray] = {}
    samples = []
    for t, center, side in annotations:
        if t % every:
            continue
        frame = by_index.get(t)
        if frame is None:
            log.warning("annotation references missing frame %s; skipped", t)
            continue
        row, col = center
        if not (0 <= row < frame.height and 0 <= col < frame.width) or side <= 0:
            log.warning("annotation (%s, %s, %s) lies outside frame %s; skipped", row, col, side, t)
            continue
        scale = min(s_x, s_y) / side
        key = (t, scale)
        if key not in cache:
            cache[key] = rescale_image(frame.pixels, scale)
        level = cache[key]
        obj = ((row + 0.5) * scale - 0.5, (col + 0.5) * scale - 0.5)
        shifts = rng.uniform(-max_shift, max_shift, size=(shifts_per_box, 2))
        centers = np.column_stack([obj[0] + shifts[:, 1], obj[1] + shifts[:, 0]])
        pix = extract_patches(level, centers, patch_size)
        for k in range(shifts_per_box):
            samples.append(ShiftSample(Patch(pix[k], tuple(centers[k]), t),
                                       float(shifts[k, 0]), float(shifts[k, 1])))
    return samples


# ---------------------------------------------------------------------------
# tree fitting

class _Presorted:
    """Per-feature sample orderings shared by every tree of a boosting run."""

    def __init__(self, X: np.ndarray):
        self.X = X
        self.order = np.argsort(X, axis=0, kind="stable").T.copy()  # (F, N)
        self.sorted_values = np.take_along_axis(X.T, self.order, axis=1)


@numba.njit(cache=True)
def _level_scan(sorted_slot, sorted_values, sorted_wr, sorted_ww, n_slots, min_leaf):
    """Best split for every open node of one tree level in a single sweep.

    All inputs are laid out in per-feature sorted order ``(F, N)``;
    ``sorted_slot`` holds the open node of each sample (-1 when closed).
    Ties go to the lowest feature index, then the lowest threshold.
    """
    n_feat, n = sorted_slot.shape
    tw = np.zeros(n_slots)
    ts = np.zeros(n_slots)
    tm = np.zeros(n_slots, dtype=np.int64)
    for k in range(n):
        s = sorted_slot[0, k]
        if s >= 0:
            tw[s] += sorted_ww[0, k]
            ts[s] += sorted_wr[0, k]
            tm[s] += 1
    best_gain = np.zeros(n_slots)
    best_f = np.full(n_slots, -1, dtype=np.int64)
    best_thr = np.zeros(n_slots)
    lw = np.zeros(n_slots)
    ls = np.zeros(n_slots)
    cnt = np.zeros(n_slots, dtype=np.int64)
    prev = np.zeros(n_slots)
    for f in range(n_feat):
        lw[:] = 0.0
        ls[:] = 0.0
        cnt[:] = 0
        for k in range(n):
            s = sorted_slot[f, k]
            if s < 0:
                continue
            v = sorted_values[f, k]
            c = cnt[s]
            if c >= min_leaf and tm[s] - c >= min_leaf and prev[s] < v:
                rw = tw[s] - lw[s]
                rs = ts[s] - ls[s]
                gain = ls[s] * ls[s] / lw[s] + rs * rs / rw - ts[s] * ts[s] / tw[s]
                if gain > best_gain[s]:
                    best_gain[s] = gain
                    best_f[s] = f
                    p = prev[s]
                    thr = p + (v - p) / 2.0
                    best_thr[s] = thr if thr < v else p
            lw[s] += sorted_ww[f, k]
            ls[s] += sorted_wr[f, k]
            cnt[s] = c + 1
            prev[s] = v
    return best_gain, best_f, best_thr


def fit_tree(pre: _Presorted, resid: np.ndarray, weight: np.ndarray,
             max_depth: int, min_leaf: int) -> RegressionTree:
    """Least-squares tree on ``resid`` with per-sample weights.

    Splits are exact greedy weighted-variance reductions over every feature
    and every midpoint between consecutive distinct values.
    """
    X = pre.X
    n = len(resid)
    wr = weight * resid
    sorted_wr = wr[pre.order]
    sorted_w = weight[pre.order]
    feature, threshold, left, right = [-1], [0.0], [-1], [-1]
    node_of = np.zeros(n, dtype=np.int64)
    open_nodes = [0]
    for _ in range(max_depth):
        if not open_nodes:
            break
        slot_of_node = {node: k for k, node in enumerate(open_nodes)}
        lookup = np.full(len(feature), -1, dtype=np.int64)
        for node, k in slot_of_node.items():
            lookup[node] = k
        slot = lookup[node_of]
        counts = np.bincount(slot[slot >= 0], minlength=len(open_nodes))
        for node, k in slot_of_node.items():
            if counts[k] < 2 * min_leaf:
                slot[slot == k] = -1
        _, best_f, best_thr = _level_scan(slot[pre.order], pre.sorted_values, sorted_wr,
                                          sorted_w, len(open_nodes), min_leaf)
        next_open = []
        for node in open_nodes:
            k = slot_of_node[node]
            f = int(best_f[k])
            if f < 0:
                continue
            thr = float(best_thr[k])
            feature[node], threshold[node] = f, thr
            members = node_of == node
            go_left = X[:, f] <= thr
            for side, mask in ((left, members & go_left), (right, members & ~go_left)):
                feature.append(-1)
                threshold.append(0.0)
                left.append(-1)
                right.append(-1)
                child = len(feature) - 1
                side[node] = child
                node_of[mask] = child
                next_open.append(child)
        open_nodes = next_open
    n_nodes = len(feature)
    wsum = np.bincount(node_of, weights=weight, minlength=n_nodes)
    rsum = np.bincount(node_of, weights=wr, minlength=n_nodes)
    value = np.divide(rsum, wsum, out=np.zeros(n_nodes), where=wsum > 0)
    return RegressionTree(np.array(feature, dtype=np.int64), np.array(threshold),
                          np.array(left, dtype=np.int64), np.array(right, dtype=np.int64),
                          value, max_depth)


def boost(X: np.ndarray, y: np.ndarray, config: RegressorConfig,
          presorted: _Presorted | None = None) -> Ensemble:
    """Gradient boosting under squared loss."""
    pre = presorted or _Presorted(X)
    base = float(np.mean(y))
    pred = np.full(len(y), base)
    # squared loss: per-sample weights from the loss derivative are uniform
    weight = np.ones(len(y))
    ens = Ensemble(base, [], [], config.shrinkage, [float(np.mean((y - pred) ** 2))])
    for _ in range(config.rounds):
        resid = y - pred
        tree = fit_tree(pre, resid, weight, config.max_depth, config.min_leaf)
        pred += config.shrinkage * tree.predict(X)
        ens.trees.append(tree)
        ens.weights.append(1.0)
        ens.loss_history.append(float(np.mean((y - pred) ** 2)))
    return ens


def train_regressor(samples, config: RegressorConfig = RegressorConfig(),
                    geometry: HogGeometry = HogGeometry()) -> ShiftRegressor:
    config.validate()
    if len(samples) < 2:
        raise ValueError("need at least two shift samples")
    sizes = {s.patch.size for s in samples}
    if len(sizes) != 1:
        raise ValueError(f"samples mix patch sizes {sorted(sizes)}")
    patch_size = sizes.pop()
    X = hog_batch(np.stack([s.patch.pixels for s in samples]), geometry)
    pre = _Presorted(X)
    rh = np.array([s.r_h for s in samples])
    rv = np.array([s.r_v for s in samples])
    horizontal = boost(X, rh, config, pre)
    vertical = boost(X, rv, config, pre)
    return ShiftRegressor(horizontal, vertical, config, patch_size, geometry)


def predict_shift(model: ShiftRegressor, patch: Patch) -> tuple[float, float]:
    sh = model.predict_batch(patch.pixels[None])[0]
    return float(sh[0]), float(sh[1])


def zero_regressor(patch_size: tuple[int, int] = PATCH_SIZE) -> ShiftRegressor:
    """Base-value-only model predicting (0, 0) everywhere."""
    empty = Ensemble(0.0, [], [], 1.0, [])
    return ShiftRegressor(empty, Ensemble(0.0, [], [], 1.0, []), RegressorConfig(rounds=1), patch_size)


# ---------------------------------------------------------------------------
# serialization

def _pack_ensemble(w: binio.Writer, ens: Ensemble) -> None:
    w.f64(ens.base_value)
    w.f64(ens.shrinkage)
    w.array(np.array(ens.weights, dtype=np.float64))
    w.array(np.array(ens.loss_history, dtype=np.float64))
    w.u32(len(ens.trees))
    for tree in ens.trees:
        w.u32(tree.max_depth)
        w.array(tree.feature.astype(np.int64))
        w.array(tree.threshold.astype(np.float64))
        w.array(tree.left.astype(np.int64))
        w.array(tree.right.astype(np.int64))
        w.array(tree.value.astype(np.float64))


def _unpack_ensemble(r: binio.Reader) -> Ensemble:
    base = r.f64()
    shrink = r.f64()
    weights = r.array().tolist()
    history = r.array().tolist()
    trees = []
    for _ in range(r.u32()):
        depth = r.u32()
        trees.append(RegressionTree(r.array(), r.array(), r.array(), r.array(), r.array(), depth))
    return Ensemble(base, trees, weights, shrink, history)


def to_bytes(model: ShiftRegressor) -> bytes:
    w = binio.Writer(MAGIC)
    w.header({
        "fingerprint": model.fingerprint,
        "patch_size": list(model.patch_size),
        "geometry": asdict(model.geometry),
        "config": asdict(model.config),
    })
    _pack_ensemble(w, model.horizontal)
    _pack_ensemble(w, model.vertical)
    return w.getvalue()


def from_bytes(data: bytes) -> ShiftRegressor:
    r = binio.Reader(data, MAGIC)
    head = r.header()
    horizontal = _unpack_ensemble(r)
    vertical = _unpack_ensemble(r)
    r.done()
    geometry = HogGeometry(**head["geometry"])
    patch_size = tuple(head["patch_size"])
    model = ShiftRegressor(horizontal, vertical, RegressorConfig(**head["config"]), patch_size, geometry)
    if model.fingerprint != head["fingerprint"]:
        raise binio.FormatError("geometry fingerprint does not match stored geometry")
    return model

