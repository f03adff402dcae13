"""Regression-driven re-centring of spatio-temporal cube slices."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .imagecore import extract_patches
from .shift_regressor import ShiftRegressor

CUBE_DIMS = (40, 40, 4)


@dataclass(frozen=True)
class StCube:
    """``pixels`` is ``(s_t, s_y, s_x)``; slice ``k`` comes from frame ``t - s_t + 1 + k``.

    ``centers`` holds the (row, col) each slice was extracted at, in the
    coordinates of the frames it was cut from (a pyramid level when
    ``scale != 1``).
    """

    pixels: np.ndarray
    centers: np.ndarray
    anchor: tuple[float, float, int]
    converged: np.ndarray
    scale: float = 1.0
    inside: bool = True

    @property
    def dims(self) -> tuple[int, int, int]:
        s_t, s_y, s_x = self.pixels.shape
        return s_x, s_y, s_t


@dataclass(frozen=True)
class MotionEstimate:
    centers: np.ndarray
    velocity: tuple[float, float]
    speed_mps: float | None = None


def slice_frames(t: int, s_t: int) -> list[int]:
    return list(range(t - s_t + 1, t + 1))


def compensate_batch(images: np.ndarray, anchors: np.ndarray, regressor: ShiftRegressor | None,
                     eps: float = 1.0, max_iter: int = 10,
                     patch_size: tuple[int, int] = (40, 40)):
    """Stabilise ``N`` cubes at once.

    ``images`` is the ``(s_t, H, W)`` stack of slice frames shared by every
    cube and ``anchors`` the ``(N, 2)`` starting (row, col). With
    ``regressor=None`` the cubes are cut at the anchors unchanged.

    Returns ``(pixels (N, s_t, s_y, s_x), centers (N, s_t, 2),
    converged (N, s_t), calls)`` where ``calls`` counts regressor
    evaluations per slice.
    """
    images = np.asarray(images, dtype=np.float64)
    s_t = images.shape[0]
    anchors = np.asarray(anchors, dtype=np.float64).reshape(-1, 2)
    n = len(anchors)
    cur = np.repeat(anchors[:, None, :], s_t, axis=1).reshape(-1, 2)
    which = np.tile(np.arange(s_t), n)
    converged = np.ones(n * s_t, dtype=bool)
    calls = np.zeros(n * s_t, dtype=np.int64)
    if regressor is not None and n:
        converged[:] = False
        active = np.arange(n * s_t)
        for _ in range(max_iter):
            if not len(active):
                break
            pix = extract_patches(images, cur[active], patch_size, which[active])
            sh = regressor.predict_batch(pix)
            calls[active] += 1
            step = np.column_stack([sh[:, 1], sh[:, 0]])
            cur[active] -= step
            done = np.sum(step * step, axis=1) < eps
            converged[active[done]] = True
            active = active[~done]
    pixels = extract_patches(images, cur, patch_size, which)
    s_x, s_y = patch_size
    return (pixels.reshape(n, s_t, s_y, s_x), cur.reshape(n, s_t, 2),
            converged.reshape(n, s_t), calls.reshape(n, s_t))


def _frame_stack(frames, t: int, s_t: int) -> np.ndarray:
    if t < s_t - 1:
        raise ValueError(f"cube ending at frame {t} needs {s_t} frames")
    by_index = {f.index: f for f in frames}
    missing = [z for z in slice_frames(t, s_t) if z not in by_index]
    if missing:
        raise ValueError(f"frames {missing} are not available")
    return np.stack([by_index[z].pixels for z in slice_frames(t, s_t)])


def compensate_cube(frames, anchor, dims=CUBE_DIMS, regressor: ShiftRegressor | None = None,
                    eps: float = 1.0, max_iter: int = 10) -> StCube:
    """Cube ending at frame ``anchor[2]`` with every slice re-centred on the object.

    Each slice starts at the anchor (row, col); the regressor's shift is
    subtracted until a step's squared length falls below ``eps`` or
    ``max_iter`` predictions were made (the slice is then flagged as not
    converged). At least one prediction is made per slice.
    """
    s_x, s_y, s_t = dims
    i, j, t = anchor
    if regressor is not None and regressor.patch_size != (s_x, s_y):
        raise ValueError(f"regressor patch size {regressor.patch_size} does not match cube {dims}")
    stack = _frame_stack(frames, t, s_t)
    pix, centers, conv, _ = compensate_batch(stack, np.array([[i, j]]), regressor, eps, max_iter, (s_x, s_y))
    h, w = stack.shape[1:]
    inside = 0 <= i < h and 0 <= j < w
    return StCube(pix[0], centers[0], (float(i), float(j), int(t)), conv[0], 1.0, inside)


def raw_cube(frames, anchor, dims=CUBE_DIMS) -> StCube:
    """Uncompensated cube: every slice cut at the anchor."""
    return compensate_cube(frames, anchor, dims, None)


def estimate_motion(cube: StCube, fps: float | None = None, object_size_m: float | None = None,
                    object_size_px: float | None = None) -> MotionEstimate:
    """Least-squares velocity (rows/frame, cols/frame) of the corrected centres."""
    centers = np.asarray(cube.centers, dtype=np.float64)
    k = np.arange(len(centers), dtype=np.float64)
    dk = k - k.mean()
    denom = float(np.sum(dk * dk))
    if denom == 0.0:
        vel = np.zeros(2)
    else:
        vel = dk @ (centers - centers.mean(axis=0)) / denom
    speed = None
    if fps is not None and object_size_m is not None and object_size_px:
        speed = math.hypot(vel[0], vel[1]) * fps * object_size_m / object_size_px
    return MotionEstimate(centers, (float(vel[0]), float(vel[1])), speed)

