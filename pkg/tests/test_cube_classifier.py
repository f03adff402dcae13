import logging

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from skywatch import binio
from skywatch.cube_classifier import (CubeClassifier, WeakLearner, best_stump, from_bytes,
                                      random_boxes, score_cube, to_bytes, train_adaboost)

import oracles


def _edge_cubes(n, seed, dims=(12, 12, 4)):
    """Positives carry a vertical step edge, negatives a horizontal one."""
    s_x, s_y, s_t = dims
    rng = np.random.default_rng(seed)
    cubes, labels = [], []
    for k in range(n):
        cube = 0.4 + 0.02 * rng.random((s_t, s_y, s_x))
        if k % 2 == 0:
            cube[:, :, s_x // 2:] += 0.4
            labels.append(1)
        else:
            cube[:, s_y // 2:, :] += 0.4
            labels.append(-1)
        cubes.append(cube)
    return np.stack(cubes), np.array(labels)


@pytest.fixture(scope="module")
def noisy_model():
    rng = np.random.default_rng(7)
    cubes, labels = _edge_cubes(60, 3)
    cubes = np.clip(cubes + 0.15 * rng.standard_normal(cubes.shape), 0, 1)
    flip = rng.random(60) < 0.1
    labels = np.where(flip, -labels, labels)
    return cubes, labels, train_adaboost(cubes, labels, T=15, pool_size=300, seed=1)


class TestStumpSearch:
    def test_matches_exhaustive_reference(self):
        rng = np.random.default_rng(0)
        for _ in range(15):
            n, k = int(rng.integers(5, 30)), int(rng.integers(1, 6))
            values = rng.random((n, k))
            if rng.random() < 0.5:
                values = np.round(values, 1)
            y = rng.choice([-1.0, 1.0], n)
            w = rng.random(n)
            w /= w.sum()
            got = best_stump(values, y, w)
            want = oracles.best_stump(values, y, w)
            assert got[0] == pytest.approx(want[0], abs=1e-12)
            _, col, thr, pol = got
            v = values[:, col]
            fires = v > thr if pol > 0 else v <= thr
            assert np.sum(w[np.where(fires, 1.0, -1.0) != y]) == pytest.approx(want[0], abs=1e-12)
            runner_up = oracles.best_stump(values, y, w, exclude=want[1:])[0]
            if runner_up - want[0] > 1e-9:
                assert got[1:] == want[1:]

    def test_negative_polarity_used(self):
        values = np.array([[0.9], [0.8], [0.1], [0.2]])
        y = np.array([-1.0, -1.0, 1.0, 1.0])
        err, col, thr, pol = best_stump(values, y, np.full(4, 0.25))
        assert err == 0.0 and pol == -1 and thr == pytest.approx(0.5)


class TestTraining:
    def test_separable_in_one_round(self):
        cubes, labels = _edge_cubes(20, 0)
        m = train_adaboost(cubes, labels, T=1, pool_size=200, seed=0)
        assert m.errors[0] == pytest.approx(1e-10)
        assert m.train_errors[-1] == 0.0
        assert np.all((m.score_batch(cubes) >= 0.5) == (labels > 0))

    def test_degenerate_round_halts(self, caplog):
        cubes = np.full((20, 4, 8, 8), 0.5)
        labels = np.array([1, -1] * 10)
        with caplog.at_level(logging.WARNING):
            m = train_adaboost(cubes, labels, T=5, pool_size=50, seed=0)
        assert m.halted and m.T == 1
        assert m.learners[0].alpha == 0.0
        assert "chance" in caplog.text

    def test_deterministic(self):
        cubes, labels = _edge_cubes(20, 1)
        a = train_adaboost(cubes, labels, T=4, pool_size=100, seed=9)
        b = train_adaboost(cubes, labels, T=4, pool_size=100, seed=9)
        assert to_bytes(a) == to_bytes(b)

    def test_weak_learners_beat_chance(self, noisy_model):
        _, _, m = noisy_model
        assert all(e < 0.5 for e in m.errors)

    def test_exponential_loss_bound(self, noisy_model):
        _, _, m = noisy_model
        assert all(te <= b + 1e-12 for te, b in zip(m.train_errors, m.bound()))

    def test_boxes_valid(self, noisy_model):
        _, _, m = noisy_model
        for lr in m.learners:
            x0, x1, y0, y1, t0, t1, o = lr.feature
            assert 0 <= x0 and x1 - x0 >= 4 and x1 <= 12
            assert 0 <= y0 and y1 - y0 >= 4 and y1 <= 12
            assert 0 <= t0 < t1 <= 4 and 0 <= o < 8
            assert 0.0 <= lr.threshold <= 1.0

    def test_random_boxes_cover_ranges(self):
        b = random_boxes(np.random.default_rng(0), (40, 40, 4), 5000)
        assert b[:, 0].min() == 0 and b[:, 1].max() == 40
        assert np.all(b[:, 1] - b[:, 0] >= 4) and np.all(b[:, 3] - b[:, 2] >= 4)
        assert set(b[:, 6]) == set(range(8))
        assert set(map(tuple, b[:, 4:6])) == {(a, c) for a in range(4) for c in range(a + 1, 5)}

    def test_hog3d_mode(self):
        cubes, labels = _edge_cubes(16, 2, dims=(16, 16, 4))
        m = train_adaboost(cubes, labels, T=2, pool_size=50, seed=0, feature_mode="hog3d")
        assert all(len(lr.feature) == 1 and lr.feature[0] < 4 * 11 for lr in m.learners)
        assert m.train_errors[-1] == 0.0

    def test_single_class(self):
        cubes, _ = _edge_cubes(6, 0)
        with pytest.raises(ValueError):
            train_adaboost(cubes, np.ones(6), T=1)

    def test_zero_rounds(self):
        cubes, labels = _edge_cubes(6, 0)
        with pytest.raises(ValueError):
            train_adaboost(cubes, labels, T=0)


class TestScoring:
    def _single(self, pol=1):
        return CubeClassifier([WeakLearner((0, 12, 0, 12, 0, 4, 0), 0.5, pol, 0.7)], (12, 12, 4))

    def test_single_learner_fires(self):
        cubes, _ = _edge_cubes(2, 0)
        assert score_cube(self._single(), cubes[0]) == 1.0
        assert score_cube(self._single(), cubes[1]) == 0.0
        assert score_cube(self._single(-1), cubes[1]) == 1.0

    def test_empty_ensemble_rejected(self):
        with pytest.raises(ValueError):
            CubeClassifier([], (12, 12, 4))

    def test_dims_mismatch(self):
        with pytest.raises(ValueError):
            score_cube(self._single(), np.zeros((4, 10, 12)))

    def test_matches_oracle(self):
        rng = np.random.default_rng(5)
        for _ in range(10):
            boxes = random_boxes(rng, (10, 10, 4), 6)
            learners = [WeakLearner(tuple(int(v) for v in b), float(rng.random()),
                                    int(rng.choice([-1, 1])), float(rng.normal(1, 1))) for b in boxes]
            m = CubeClassifier(learners, (10, 10, 4))
            cube = rng.random((4, 10, 10))
            assert score_cube(m, cube) == pytest.approx(oracles.classifier_score(learners, cube), abs=1e-6)

    @settings(max_examples=25, deadline=None)
    @given(st.floats(0.05, 20.0), st.integers(0, 59))
    def test_intensity_scale_invariance(self, noisy_model, s, k):
        cubes, _, m = noisy_model
        assert score_cube(m, cubes[k] * s) == pytest.approx(score_cube(m, cubes[k]), abs=1e-6)

    @settings(max_examples=25, deadline=None)
    @given(st.floats(0.01, 100.0))
    def test_alpha_rescaling_keeps_decisions(self, noisy_model, c):
        cubes, _, m = noisy_model
        scaled = CubeClassifier([WeakLearner(lr.feature, lr.threshold, lr.polarity, lr.alpha * c)
                                 for lr in m.learners], m.dims)
        assert np.allclose(scaled.score_batch(cubes), m.score_batch(cubes), atol=1e-12)

    def test_scores_in_unit_interval(self, noisy_model):
        cubes, _, m = noisy_model
        s = m.score_batch(np.random.default_rng(0).random((30, 4, 12, 12)))
        assert np.all((s >= 0) & (s <= 1))


class TestSerialization:
    def test_round_trip(self, noisy_model, tmp_path):
        cubes, _, m = noisy_model
        path = tmp_path / "c.swc"
        m.save(str(path))
        again = CubeClassifier.load(str(path))
        assert path.read_bytes()[:4] == b"SWC1"
        assert to_bytes(again) == path.read_bytes()
        assert np.array_equal(again.score_batch(cubes), m.score_batch(cubes))

    def test_wrong_magic(self, noisy_model):
        _, _, m = noisy_model
        with pytest.raises(binio.FormatError):
            from_bytes(b"SWR1" + to_bytes(m)[4:])
