from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from skywatch.evalkit import read_ground_truth
from skywatch.imagecore import load_frame_sequence
from skywatch.synthgen import (Sequence, SynthConfig, format_config, generate_sequence, load_config,
                               named_configs, parse_config, write_sequence)

SMALL = SynthConfig(width=64, height=48, frames=6, targets=2, side_min=10, side_max=20, seed=3)


class TestGenerate:
    def test_zero_targets_is_background(self):
        cfg = replace(SMALL, targets=0, noise_sigma=0.0)
        frames, gts, ann = generate_sequence(cfg)
        assert gts == [] and ann == []
        seq = Sequence(cfg)
        assert np.array_equal(frames[2].pixels, np.clip(seq.background(2), 0, 1))

    def test_same_seed_bit_identical(self):
        a, ga, _ = generate_sequence(SMALL)
        b, gb, _ = generate_sequence(SMALL)
        assert all(np.array_equal(x.pixels, y.pixels) for x, y in zip(a, b))
        assert ga == gb

    def test_different_seed_differs(self):
        a, _, _ = generate_sequence(SMALL)
        b, _, _ = generate_sequence(replace(SMALL, seed=4))
        assert not np.array_equal(a[0].pixels, b[0].pixels)

    def test_constant_velocity(self):
        cfg = replace(SMALL, width=400, height=300, targets=1, frames=5, speed_min=2.0, speed_max=2.0,
                      drift_x=0.0, noise_sigma=0.0)
        _, gts, _ = generate_sequence(cfg)
        tg = Sequence(cfg).targets[0]
        steps = np.diff([[g.row, g.col] for g in gts], axis=0)
        assert np.allclose(steps, tg.velocity, atol=1e-9)
        assert np.hypot(*tg.velocity) == pytest.approx(2.0)

    def test_row_count(self):
        _, gts, ann = generate_sequence(SMALL)
        assert len(gts) == SMALL.frames * SMALL.targets == len(ann)
        assert ann[0] == (gts[0].frame, (gts[0].row, gts[0].col), gts[0].side)

    @settings(max_examples=15, deadline=None)
    @given(st.integers(0, 10_000), st.floats(0.0, 8.0), st.floats(0.0, 6.0))
    def test_boxes_inside_frame(self, seed, speed, jitter):
        cfg = replace(SMALL, seed=seed, frames=25, speed_min=0.0, speed_max=speed, jitter_amp=jitter,
                      jitter_period=5.0)
        _, gts, _ = generate_sequence(cfg)
        for g in gts:
            assert g.row - g.side / 2 >= 0 and g.row + g.side / 2 <= cfg.height - 1
            assert g.col - g.side / 2 >= 0 and g.col + g.side / 2 <= cfg.width - 1

    def test_contrast_self_check_holds(self):
        cfg = replace(SMALL, noise_sigma=0.0, contrast_min=0.3, contrast_max=0.3, targets=1)
        frames, gts, _ = generate_sequence(cfg)
        seq = Sequence(cfg)
        g = gts[0]
        bg = seq.background(0)
        # fully covered pixels all carry the flat target level
        px = frames[0].pixels
        core = px == px[int(round(g.row)), int(round(g.col))]
        assert core.sum() > 10
        assert abs(np.mean(frames[0].pixels[core] - bg[core])) >= 0.3 - 1e-9

    def test_collision_growth(self):
        cfg = replace(SMALL, width=120, height=100, targets=1, collision=True, side_min=10, side_max=80)
        _, gts, _ = generate_sequence(cfg)
        assert gts[0].side == pytest.approx(10) and gts[-1].side == pytest.approx(80)
        assert all(a.side < b.side for a, b in zip(gts, gts[1:]))
        assert len({(g.row, g.col) for g in gts}) == 1

    def test_target_too_large(self):
        with pytest.raises(ValueError):
            generate_sequence(replace(SMALL, side_max=60))

    def test_pixels_in_range(self):
        frames, _, _ = generate_sequence(replace(SMALL, noise_sigma=0.3))
        assert all(f.pixels.min() >= 0 and f.pixels.max() <= 1 for f in frames)


class TestFiles:
    def test_write_and_reload(self, tmp_path):
        frames, gts, _ = generate_sequence(SMALL)
        write_sequence(str(tmp_path), frames, gts, SMALL)
        loaded = load_frame_sequence(str(tmp_path))
        assert len(loaded) == SMALL.frames
        assert np.max(np.abs(loaded[0].pixels - frames[0].pixels)) <= 0.5 / 255 + 1e-12
        back = read_ground_truth(str(tmp_path / "gt.csv"))
        assert [(g.frame, round(g.row, 4), round(g.side, 4)) for g in back] == \
            [(g.frame, round(g.row, 4), round(g.side, 4)) for g in gts]
        assert load_config(str(tmp_path / "synth.cfg")) == SMALL

    def test_format_parse_round_trip(self):
        assert parse_config(format_config(SMALL)) == SMALL

    def test_parse_errors(self):
        with pytest.raises(ValueError, match="line 2"):
            parse_config("width = 10\nbogus = 1\n")
        with pytest.raises(ValueError):
            parse_config("width\n")
        with pytest.raises(ValueError):
            parse_config("collision = maybe\n")

    def test_shipped_benchmarks(self):
        assert {"bench-easy", "bench-hard", "bench-collision"} <= set(named_configs())
        easy, hard = load_config("bench-easy"), load_config("bench-hard")
        assert easy.seed == hard.seed == 7
        assert hard.noise_sigma > easy.noise_sigma
        assert hard.contrast_max < easy.contrast_min
        assert abs(hard.drift_x) > abs(easy.drift_x)

    def test_unknown_benchmark(self):
        with pytest.raises(ValueError, match="bench-easy"):
            load_config("bench-nope")

    def test_overrides_validated(self):
        assert load_config("bench-easy", frames=3).frames == 3
        with pytest.raises(ValueError):
            load_config("bench-easy", side_min=-1.0)
