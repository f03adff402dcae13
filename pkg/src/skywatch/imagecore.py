"""Frames, patches, pyramids and spatial gradients.

Images are float64 arrays indexed ``[row, col]`` with values in [0, 1].
A patch of size ``(s_x, s_y)`` centred at ``(i, j)`` covers rows
``i - s_y//2 .. i - s_y//2 + s_y - 1`` and the analogous columns, so an
integer centre reproduces an exact pixel sub-grid.
"""

from __future__ import annotations

import fnmatch
import os
from dataclasses import dataclass, field

import numba
import numpy as np
from PIL import Image

LUMA = (0.299, 0.587, 0.114)
IMAGE_EXTENSIONS = (".png", ".pgm")


class FrameError(ValueError):
    pass


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Frame:
    pixels: np.ndarray
    index: int = 0

    def __post_init__(self):
        px = _frozen(self.pixels)
        if px.ndim != 2:
            raise FrameError(f"frame must be 2-D, got shape {px.shape}")
        if px.size and (px.min() < 0.0 or px.max() > 1.0):
            raise FrameError("frame intensities must lie in [0, 1]")
        object.__setattr__(self, "pixels", px)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


@dataclass(frozen=True)
class Patch:
    pixels: np.ndarray
    center: tuple[float, float]
    frame_index: int = 0

    def __post_init__(self):
        object.__setattr__(self, "pixels", _frozen(self.pixels))
        object.__setattr__(self, "center", (float(self.center[0]), float(self.center[1])))

    @property
    def size(self) -> tuple[int, int]:
        """``(s_x, s_y)``: width then height."""
        return self.pixels.shape[1], self.pixels.shape[0]


@dataclass(frozen=True)
class GradientField:
    gx: np.ndarray
    gy: np.ndarray
    magnitude: np.ndarray = field(repr=False)
    orientation: np.ndarray = field(repr=False)


# ---------------------------------------------------------------------------
# loading

def to_gray(rgb: np.ndarray) -> np.ndarray:
    """8-bit RGB(A) or gray array -> float gray in [0, 1]."""
    a = np.asarray(rgb, dtype=np.float64)
    if a.ndim == 3:
        a = a[..., 0] * LUMA[0] + a[..., 1] * LUMA[1] + a[..., 2] * LUMA[2]
    return np.clip(a / 255.0, 0.0, 1.0)


def read_image(path: str) -> np.ndarray:
    try:
        with Image.open(path) as im:
            if im.mode not in ("L", "RGB", "RGBA"):
                im = im.convert("RGB")
            arr = np.asarray(im)
    except (OSError, ValueError) as exc:
        raise FrameError(f"{path}: unreadable image ({exc})") from exc
    return to_gray(arr)


def write_image(path: str, pixels: np.ndarray) -> None:
    """Write a [0, 1] gray image as 8-bit (PNG or PGM by extension)."""
    q = np.rint(np.clip(pixels, 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(q, mode="L").save(path)


def load_frame_sequence(directory: str, pattern: str = "*") -> list[Frame]:
    if not os.path.isdir(directory):
        raise FrameError(f"{directory}: no such directory")
    names = sorted(
        n for n in os.listdir(directory)
        if fnmatch.fnmatch(n, pattern) and n.lower().endswith(IMAGE_EXTENSIONS)
    )
    if not names:
        raise FrameError(f"{directory}: no frames found")
    frames = []
    shape = None
    for t, name in enumerate(names):
        path = os.path.join(directory, name)
        px = read_image(path)
        if shape is None:
            shape = px.shape
        elif px.shape != shape:
            raise FrameError(f"{path}: size {px.shape[::-1]} differs from {shape[::-1]}")
        frames.append(Frame(px, t))
    return frames


# ---------------------------------------------------------------------------
# sampling

def sample_bilinear(image: np.ndarray, rows, cols, which=None) -> np.ndarray:
    """Bilinear lookup with edge replication.

    ``image`` is ``(H, W)`` or a stack ``(M, H, W)``. For a stack, ``which``
    (one entry per element of the leading axis of ``rows``) picks the image;
    by default it is ``arange``.
    """
    img = np.asarray(image)
    h, w = img.shape[-2:]
    r = np.clip(np.asarray(rows, dtype=np.float64), 0.0, h - 1.0)
    c = np.clip(np.asarray(cols, dtype=np.float64), 0.0, w - 1.0)
    r0 = np.floor(r).astype(np.intp)
    c0 = np.floor(c).astype(np.intp)
    np.minimum(r0, h - 2 if h > 1 else 0, out=r0)
    np.minimum(c0, w - 2 if w > 1 else 0, out=c0)
    fr = r - r0
    fc = c - c0
    r1 = np.minimum(r0 + 1, h - 1)
    c1 = np.minimum(c0 + 1, w - 1)
    if img.ndim == 2:
        a, b = img[r0, c0], img[r0, c1]
        d, e = img[r1, c0], img[r1, c1]
    else:
        n = np.arange(r.shape[0]) if which is None else np.asarray(which, dtype=np.intp)
        n = n.reshape((-1,) + (1,) * (r.ndim - 1))
        a, b = img[n, r0, c0], img[n, r0, c1]
        d, e = img[n, r1, c0], img[n, r1, c1]
    top = a + (b - a) * fc
    bot = d + (e - d) * fc
    return top + (bot - top) * fr


def patch_offsets(size: tuple[int, int]) -> tuple[np.ndarray, np.ndarray]:
    """Row and column offsets of a ``(s_x, s_y)`` patch relative to its centre."""
    s_x, s_y = size
    return np.arange(s_y) - s_y // 2, np.arange(s_x) - s_x // 2


@numba.njit(cache=True, nogil=True)
def _extract_kernel(stack, which, centers, s_x, s_y, out):
    h, w = stack.shape[1], stack.shape[2]
    r_hi = max(h - 2, 0)
    c_hi = max(w - 2, 0)
    for n in range(centers.shape[0]):
        img = stack[which[n]]
        for a in range(s_y):
            r = min(max(centers[n, 0] + (a - s_y // 2), 0.0), h - 1.0)
            r0 = min(int(np.floor(r)), r_hi)
            r1 = min(r0 + 1, h - 1)
            fr = r - r0
            for b in range(s_x):
                c = min(max(centers[n, 1] + (b - s_x // 2), 0.0), w - 1.0)
                c0 = min(int(np.floor(c)), c_hi)
                c1 = min(c0 + 1, w - 1)
                fc = c - c0
                top = img[r0, c0] + (img[r0, c1] - img[r0, c0]) * fc
                bot = img[r1, c0] + (img[r1, c1] - img[r1, c0]) * fc
                out[n, a, b] = top + (bot - top) * fr


def extract_patches(image: np.ndarray, centers: np.ndarray, size: tuple[int, int],
                    which=None) -> np.ndarray:
    """Batched extraction: ``centers`` is ``(N, 2)`` of (row, col).

    ``image`` may be a single frame or an ``(M, H, W)`` stack, with
    ``which`` selecting the stack entry of each centre (default: entry
    ``n`` for centre ``n``). Same arithmetic as :func:`sample_bilinear`.
    Returns ``(N, s_y, s_x)``.
    """
    s_x, s_y = size
    centers = np.ascontiguousarray(np.asarray(centers, dtype=np.float64).reshape(-1, 2))
    stack = np.asarray(image, dtype=np.float64)
    n = len(centers)
    if stack.ndim == 2:
        stack = stack[None]
        which = np.zeros(n, dtype=np.intp)
    elif which is None:
        which = np.arange(n, dtype=np.intp)
    which = np.ascontiguousarray(np.asarray(which, dtype=np.intp))
    out = np.empty((n, s_y, s_x))
    _extract_kernel(np.ascontiguousarray(stack), which, centers, s_x, s_y, out)
    return out


def extract_patch(frame: Frame, center, size: tuple[int, int]) -> Patch:
    s_x, s_y = size
    if s_x < 1 or s_y < 1:
        raise ValueError(f"patch size must be positive, got {size}")
    px = extract_patches(frame.pixels, np.array([center]), size)[0]
    return Patch(px, (center[0], center[1]), frame.index)


def rescale_image(image: np.ndarray, scale: float) -> np.ndarray:
    """Resample by ``scale`` with pixel-centre alignment.

    Output pixel ``p`` samples source coordinate ``(p + 0.5) / scale - 0.5``.
    """
    h, w = image.shape
    nh = max(1, int(round(h * scale)))
    nw = max(1, int(round(w * scale)))
    rows = (np.arange(nh) + 0.5) / scale - 0.5
    cols = (np.arange(nw) + 0.5) / scale - 0.5
    return sample_bilinear(image, rows[:, None], cols[None, :])


def to_level(coord, scale: float):
    """Original-image coordinate -> coordinate in a level of the given scale."""
    return (np.asarray(coord, dtype=np.float64) + 0.5) * scale - 0.5


def from_level(coord, scale: float):
    return (np.asarray(coord, dtype=np.float64) + 0.5) / scale - 0.5


def image_pyramid(frame: Frame, scale_step: float = 0.8, min_side: int = 40,
                  base_scale: float = 1.0) -> list[tuple[Frame, float]]:
    """Levels at ``base_scale * scale_step**k`` until a side would drop below ``min_side``.

    Level 0 is ``frame`` itself when ``base_scale`` is 1.
    """
    if not 0.0 < scale_step < 1.0:
        raise ValueError(f"scale_step must lie in (0, 1), got {scale_step}")
    levels = []
    k = 0
    while True:
        scale = base_scale * scale_step ** k
        if scale == 1.0:
            px = frame.pixels
        else:
            px = rescale_image(frame.pixels, scale)
        if k > 0 and min(px.shape) < min_side:
            break
        levels.append((Frame(np.clip(px, 0.0, 1.0), frame.index), scale))
        if min(px.shape) < min_side:
            break
        k += 1
    return levels


# ---------------------------------------------------------------------------
# gradients

def gradients(pixels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Central differences inside, one-sided at the borders, over the last two axes."""
    gy = np.gradient(pixels, axis=-2)
    gx = np.gradient(pixels, axis=-1)
    return gx, gy


def unsigned_orientation(gx: np.ndarray, gy: np.ndarray) -> np.ndarray:
    theta = np.arctan2(gy, gx) % np.pi
    theta[(gx == 0) & (gy == 0)] = 0.0
    return theta


def spatial_gradients(patch: Patch) -> GradientField:
    px = patch.pixels
    if px.shape[0] < 3 or px.shape[1] < 3:
        raise ValueError(f"gradients need at least a 3x3 patch, got {px.shape[::-1]}")
    gx, gy = gradients(px)
    mag = np.hypot(gx, gy)
    return GradientField(_frozen(gx), _frozen(gy), _frozen(mag), _frozen(unsigned_orientation(gx, gy)))
