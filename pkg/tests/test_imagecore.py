import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from PIL import Image

from skywatch.imagecore import (Frame, FrameError, extract_patch, extract_patches, from_level,
                                image_pyramid, load_frame_sequence, rescale_image, sample_bilinear,
                                spatial_gradients, to_level, Patch)

import oracles


def _save(path, arr, mode="L"):
    Image.fromarray(np.asarray(arr, dtype=np.uint8), mode=mode).save(path)


class TestLoading:
    def test_uniform_gray_directory(self, tmp_path):
        for k in range(4):
            _save(tmp_path / f"f{k:02d}.png", np.full((6, 8), 128))
        frames = load_frame_sequence(str(tmp_path))
        assert [f.index for f in frames] == [0, 1, 2, 3]
        assert all(np.allclose(f.pixels, 128 / 255) for f in frames)

    def test_lexicographic_order(self, tmp_path):
        for k, name in enumerate(["b.png", "a.png", "c.pgm"]):
            _save(tmp_path / name, np.full((4, 4), 10 * (k + 1)))
        frames = load_frame_sequence(str(tmp_path))
        assert [round(float(f.pixels[0, 0]) * 255) for f in frames] == [20, 10, 30]

    def test_empty_directory(self, tmp_path):
        with pytest.raises(FrameError, match="no frames found"):
            load_frame_sequence(str(tmp_path))

    def test_missing_directory(self, tmp_path):
        with pytest.raises(FrameError):
            load_frame_sequence(str(tmp_path / "nope"))

    def test_inconsistent_sizes_name_the_file(self, tmp_path):
        _save(tmp_path / "a.png", np.zeros((4, 4)))
        _save(tmp_path / "b.png", np.zeros((5, 4)))
        with pytest.raises(FrameError, match="b.png"):
            load_frame_sequence(str(tmp_path))

    def test_unreadable_file(self, tmp_path):
        (tmp_path / "a.png").write_bytes(b"not an image")
        with pytest.raises(FrameError, match="a.png"):
            load_frame_sequence(str(tmp_path))

    def test_red_pixel_luma(self, tmp_path):
        rgb = np.zeros((2, 2, 3), dtype=np.uint8)
        rgb[..., 0] = 255
        Image.fromarray(rgb, mode="RGB").save(tmp_path / "r.png")
        frames = load_frame_sequence(str(tmp_path))
        assert frames[0].pixels[0, 0] == pytest.approx(0.299, abs=1e-12)

    def test_frame_rejects_out_of_range(self):
        with pytest.raises(FrameError):
            Frame(np.full((3, 3), 1.5))


class TestPatches:
    def test_constant_frame(self):
        f = Frame(np.full((20, 30), 0.7))
        p = extract_patch(f, (3.3, -4.2), (7, 5))
        assert p.pixels.shape == (5, 7)
        assert np.allclose(p.pixels, 0.7)
        assert p.center == (3.3, -4.2)

    def test_integer_center_is_exact_subgrid(self):
        img = np.random.default_rng(0).random((30, 40))
        p = extract_patch(Frame(img), (12, 17), (8, 6))
        # rows 12 - 3 .. 12 + 2, cols 17 - 4 .. 17 + 3
        assert np.array_equal(p.pixels, img[9:15, 13:21])

    def test_corner_replication(self):
        img = np.arange(16, dtype=float).reshape(4, 4) / 16
        p = extract_patch(Frame(img), (0, 0), (3, 3))
        expect = np.array([[img[0, 0], img[0, 0], img[0, 1]],
                           [img[0, 0], img[0, 0], img[0, 1]],
                           [img[1, 0], img[1, 0], img[1, 1]]])
        assert np.array_equal(p.pixels, expect)

    def test_non_positive_size(self):
        with pytest.raises(ValueError):
            extract_patch(Frame(np.zeros((5, 5))), (2, 2), (0, 3))

    def test_matches_general_sampler(self):
        rng = np.random.default_rng(1)
        stack = rng.random((3, 25, 31))
        centers = rng.uniform(-8, 40, (50, 2))
        which = rng.integers(0, 3, 50)
        got = extract_patches(stack, centers, (9, 7), which)
        dr = np.arange(7) - 3
        dc = np.arange(9) - 4
        rows = centers[:, 0, None, None] + dr[None, :, None] + 0 * dc[None, None, :]
        cols = centers[:, 1, None, None] + dc[None, None, :] + 0 * dr[None, :, None]
        assert np.array_equal(got, sample_bilinear(stack, rows, cols, which))

    @settings(max_examples=40, deadline=None)
    @given(st.floats(0, 1), st.floats(0, 1), st.integers(-3, 3), st.integers(-3, 3))
    def test_translation_consistency(self, fr, fc, dy, dx):
        img = np.random.default_rng(2).random((40, 40))
        shifted = np.roll(np.roll(img, -dy, axis=0), -dx, axis=1)
        c = np.array([20 + fr, 20 + fc])
        a = extract_patches(img, c[None], (6, 6))[0]
        b = extract_patches(shifted, (c - [dy, dx])[None], (6, 6))[0]
        assert np.allclose(a, b, atol=1e-9)


class TestPyramid:
    def test_level_count_matches_geometric_sequence(self):
        frame = Frame(np.zeros((480, 752)))
        levels = image_pyramid(frame, 0.8, 40)
        assert len(levels) == oracles.pyramid_level_count(752, 480) == 12
        assert min(levels[-1][0].pixels.shape) >= 40

    def test_sides_within_one_pixel(self):
        frame = Frame(np.zeros((480, 752)))
        for k, (f, s) in enumerate(image_pyramid(frame, 0.8, 40)):
            assert s == pytest.approx(0.8 ** k, rel=1e-15)
            assert abs(f.height - 480 * 0.8 ** k) <= 1
            assert abs(f.width - 752 * 0.8 ** k) <= 1

    def test_level_zero_is_original(self):
        img = np.random.default_rng(3).random((60, 80))
        f0, s0 = image_pyramid(Frame(img), 0.8, 40)[0]
        assert s0 == 1.0 and np.array_equal(f0.pixels, img)

    def test_small_frame_single_level(self):
        assert len(image_pyramid(Frame(np.zeros((30, 30))), 0.8, 40)) == 1

    @pytest.mark.parametrize("step", [1.0, 1.2, 0.0])
    def test_invalid_step(self, step):
        with pytest.raises(ValueError):
            image_pyramid(Frame(np.zeros((50, 50))), step, 40)

    def test_level_coordinates_round_trip(self):
        p = np.array([[3.25, 17.5]])
        assert np.allclose(from_level(to_level(p, 0.64), 0.64), p)

    def test_rescale_identity(self):
        img = np.random.default_rng(4).random((10, 12))
        assert np.array_equal(rescale_image(img, 1.0), img)


class TestGradients:
    def test_constant(self):
        g = spatial_gradients(Patch(np.full((5, 5), 0.3), (2, 2)))
        assert np.all(g.magnitude == 0) and np.all(g.orientation == 0)

    def test_horizontal_ramp(self):
        s = 8
        ramp = np.tile(np.arange(s) / s, (6, 1))
        g = spatial_gradients(Patch(ramp, (3, 4)))
        assert np.allclose(g.gx, 1 / s, atol=1e-15)
        assert np.all(g.gy == 0)

    def test_matches_direct_loop(self):
        img = np.random.default_rng(5).random((5, 5))
        g = spatial_gradients(Patch(img, (2, 2)))
        rows = img.tolist()
        for r in range(5):
            for c in range(5):
                gx, gy = oracles.gradient_at(rows, r, c)
                assert abs(g.gx[r, c] - gx) <= 1e-12
                assert abs(g.gy[r, c] - gy) <= 1e-12

    def test_field_invariants(self):
        img = np.random.default_rng(6).random((9, 7))
        g = spatial_gradients(Patch(img, (4, 3)))
        assert np.allclose(g.magnitude, np.sqrt(g.gx ** 2 + g.gy ** 2), atol=1e-9)
        assert np.all((g.orientation >= 0) & (g.orientation < np.pi))

    def test_too_small(self):
        with pytest.raises(ValueError):
            spatial_gradients(Patch(np.zeros((2, 5)), (1, 2)))
