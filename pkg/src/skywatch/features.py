"""Gradient features: HoG, 3D-HoG and orientation-energy channels.

Orientation binning is hard and unsigned: an angle ``theta`` in [0, pi) goes
to the nearest bin centre ``k * pi / B``, wrapping at pi.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

from .imagecore import Patch, gradients, unsigned_orientation

HOG_CELL = 8
HOG_BLOCK = 2
HOG_BINS = 9
HOG_EPS = 1e-6
HOG_CLIP = 0.2
CHANNEL_BINS = 8
ENERGY_FLOOR = 1e-12


@dataclass(frozen=True)
class HogGeometry:
    cell: int = HOG_CELL
    block: int = HOG_BLOCK
    bins: int = HOG_BINS
    temporal: bool = False

    def layout(self, width: int, height: int) -> tuple[int, int, int]:
        if width % self.cell or height % self.cell:
            raise ValueError(f"{width}x{height} patch is not divisible into {self.cell}px cells")
        cx, cy = width // self.cell, height // self.cell
        if cx < self.block or cy < self.block:
            raise ValueError(f"{width}x{height} patch holds fewer cells than one {self.block}x{self.block} block")
        return cx, cy, self.bins + (2 if self.temporal else 0)

    def length(self, width: int, height: int) -> int:
        cx, cy, nb = self.layout(width, height)
        return (cx - self.block + 1) * (cy - self.block + 1) * self.block ** 2 * nb

    def fingerprint(self, width: int, height: int) -> str:
        kind = "hog3d" if self.temporal else "hog"
        return f"{kind}:{width}x{height}:c{self.cell}:b{self.block}:n{self.bins}"


@dataclass(frozen=True)
class HogDescriptor:
    values: np.ndarray
    layout: tuple[int, int, int]


@dataclass(frozen=True)
class CubeBox:
    """Half-open box ``[x0, x1) x [y0, y1) x [t0, t1)`` plus orientation bin."""

    x0: int
    x1: int
    y0: int
    y1: int
    t0: int
    t1: int
    orientation: int

    def as_tuple(self) -> tuple[int, ...]:
        return (self.x0, self.x1, self.y0, self.y1, self.t0, self.t1, self.orientation)

    def check(self, dims: tuple[int, int, int], bins: int = CHANNEL_BINS) -> None:
        s_x, s_y, s_t = dims
        ok = (0 <= self.x0 < self.x1 <= s_x and 0 <= self.y0 < self.y1 <= s_y
              and 0 <= self.t0 < self.t1 <= s_t and 0 <= self.orientation < bins)
        if not ok:
            raise ValueError(f"box {self.as_tuple()} outside cube dims {dims} / {bins} bins")


@dataclass(frozen=True)
class ChannelVolume:
    """Per-slice orientation channels and their 3-D summed-area table.

    ``channels`` is ``(s_t, B, s_y, s_x)``. ``integral`` is
    ``(s_t + 1, s_y + 1, s_x + 1, B + 1)``; the extra channel holds total
    gradient magnitude, the normaliser of every energy.
    """

    channels: np.ndarray
    integral: np.ndarray
    bins: int

    @property
    def dims(self) -> tuple[int, int, int]:
        s_t, _, s_y, s_x = self.channels.shape
        return s_x, s_y, s_t


def orientation_bins(theta: np.ndarray, bins: int) -> np.ndarray:
    return np.rint(theta * (bins / np.pi)).astype(np.intp) % bins


def _magnitude_and_bin(pixels: np.ndarray, bins: int) -> tuple[np.ndarray, np.ndarray]:
    gx, gy = gradients(pixels)
    mag = np.hypot(gx, gy)
    return mag, orientation_bins(unsigned_orientation(gx, gy), bins)


@numba.njit(cache=True, nogil=True, inline="always")
def _pixel_gradient(img, r, c, bins):
    """Magnitude and hard unsigned bin at one pixel; same arithmetic as the
    vectorised path (``np.gradient`` differences, ``atan2 mod pi``)."""
    h, w = img.shape
    if c == 0:
        gx = img[r, 1] - img[r, 0]
    elif c == w - 1:
        gx = img[r, c] - img[r, c - 1]
    else:
        gx = (img[r, c + 1] - img[r, c - 1]) / 2.0
    if r == 0:
        gy = img[1, c] - img[0, c]
    elif r == h - 1:
        gy = img[r, c] - img[r - 1, c]
    else:
        gy = (img[r + 1, c] - img[r - 1, c]) / 2.0
    mag = np.hypot(gx, gy)
    if gx == 0.0 and gy == 0.0:
        return mag, 0
    theta = np.arctan2(gy, gx) % np.pi
    return mag, int(np.rint(theta * (bins / np.pi))) % bins


@numba.njit(cache=True, nogil=True)
def _cells_kernel(cubes, cell, bins, temporal, out):
    n, s_t, h, w = cubes.shape
    out[:] = 0.0
    for k in range(n):
        for t in range(s_t):
            img = cubes[k, t]
            for r in range(h):
                for c in range(w):
                    mag, b = _pixel_gradient(img, r, c, bins)
                    out[k, r // cell, c // cell, b] += mag
                    if temporal and t > 0:
                        d = img[r, c] - cubes[k, t - 1, r, c]
                        if d > 0:
                            out[k, r // cell, c // cell, bins] += d
                        elif d < 0:
                            out[k, r // cell, c // cell, bins + 1] -= d


@numba.njit(cache=True, nogil=True)
def _blocks_kernel(cells, block, clip, eps, out):
    n, cy, cx, nb = cells.shape
    by, bx = cy - block + 1, cx - block + 1
    blen = block * block * nb
    vec = np.empty(blen)
    for k in range(n):
        for i in range(by):
            for j in range(bx):
                m = 0
                for dy in range(block):
                    for dx in range(block):
                        for b in range(nb):
                            vec[m] = cells[k, i + dy, j + dx, b]
                            m += 1
                ss = 0.0
                for m in range(blen):
                    ss += vec[m] * vec[m]
                norm = np.sqrt(ss) + eps
                ss = 0.0
                for m in range(blen):
                    vec[m] = min(vec[m] / norm, clip)
                    ss += vec[m] * vec[m]
                norm = np.sqrt(ss) + eps
                base = (i * bx + j) * blen
                for m in range(blen):
                    out[k, base + m] = vec[m] / norm


@numba.njit(cache=True, nogil=True)
def _integral_kernel(cubes, bins, sat):
    n, s_t, h, w = cubes.shape
    sat[:] = 0.0
    for k in range(n):
        vol = sat[k]
        for t in range(s_t):
            img = cubes[k, t]
            for r in range(h):
                for c in range(w):
                    mag, b = _pixel_gradient(img, r, c, bins)
                    vol[t + 1, r + 1, c + 1, b] = mag
                    vol[t + 1, r + 1, c + 1, bins] = mag
        # running sums along t, then rows, then columns
        for t in range(1, s_t + 1):
            for r in range(1, h + 1):
                for c in range(1, w + 1):
                    for ch in range(bins + 1):
                        vol[t, r, c, ch] += vol[t - 1, r, c, ch]
        for t in range(1, s_t + 1):
            for r in range(1, h + 1):
                for c in range(1, w + 1):
                    for ch in range(bins + 1):
                        vol[t, r, c, ch] += vol[t, r - 1, c, ch]
        for t in range(1, s_t + 1):
            for r in range(1, h + 1):
                for c in range(1, w + 1):
                    for ch in range(bins + 1):
                        vol[t, r, c, ch] += vol[t, r, c - 1, ch]


def _hog_cells(cubes: np.ndarray, geometry: HogGeometry) -> np.ndarray:
    n, _, h, w = cubes.shape
    nb = geometry.bins + (2 if geometry.temporal else 0)
    cells = np.empty((n, h // geometry.cell, w // geometry.cell, nb))
    _cells_kernel(np.ascontiguousarray(cubes), geometry.cell, geometry.bins, geometry.temporal, cells)
    return cells


def _normalize_blocks(cells: np.ndarray, block: int) -> np.ndarray:
    """cells ``(N, cy, cx, nb)`` -> L2-Hys normalised descriptors ``(N, D)``."""
    n, cy, cx, nb = cells.shape
    out = np.empty((n, (cy - block + 1) * (cx - block + 1) * block * block * nb))
    _blocks_kernel(np.ascontiguousarray(cells), block, HOG_CLIP, HOG_EPS, out)
    return out


def hog_batch(pixels: np.ndarray, geometry: HogGeometry = HogGeometry()) -> np.ndarray:
    """HoG of a stack of patches ``(N, s_y, s_x)`` -> ``(N, D)``."""
    pixels = np.asarray(pixels, dtype=np.float64)
    h, w = pixels.shape[-2:]
    geometry.layout(w, h)
    if geometry.temporal:
        geometry = HogGeometry(geometry.cell, geometry.block, geometry.bins)
    return _normalize_blocks(_hog_cells(pixels[:, None], geometry), geometry.block)


def hog(patch: Patch, geometry: HogGeometry = HogGeometry()) -> HogDescriptor:
    s_x, s_y = patch.size
    layout = geometry.layout(s_x, s_y)
    return HogDescriptor(hog_batch(patch.pixels[None], geometry)[0], layout)


def hog3d_batch(cubes: np.ndarray, geometry: HogGeometry = HogGeometry(temporal=True)) -> np.ndarray:
    """3D-HoG of cubes ``(N, s_t, s_y, s_x)`` -> ``(N, D)``.

    Spatial bins are summed over slices; two extra bins per cell hold the
    positive and negative parts of the forward temporal difference.
    """
    cubes = np.asarray(cubes, dtype=np.float64)
    n, s_t, h, w = cubes.shape
    if not geometry.temporal:
        geometry = HogGeometry(geometry.cell, geometry.block, geometry.bins, temporal=True)
    geometry.layout(w, h)
    return _normalize_blocks(_hog_cells(cubes, geometry), geometry.block)


def hog3d(cube, geometry: HogGeometry = HogGeometry(temporal=True)) -> HogDescriptor:
    data = _cube_pixels(cube)
    s_t, s_y, s_x = data.shape
    layout = HogGeometry(geometry.cell, geometry.block, geometry.bins, True).layout(s_x, s_y)
    return HogDescriptor(hog3d_batch(data[None], geometry)[0], layout)


def _cube_pixels(cube) -> np.ndarray:
    return np.asarray(getattr(cube, "pixels", cube), dtype=np.float64)


# ---------------------------------------------------------------------------
# orientation-energy channels

def channels_batch(cubes: np.ndarray, bins: int = CHANNEL_BINS) -> tuple[np.ndarray, np.ndarray]:
    """Channels ``(N, s_t, B, s_y, s_x)`` and magnitudes ``(N, s_t, s_y, s_x)``."""
    cubes = np.asarray(cubes, dtype=np.float64)
    if cubes.shape[-1] < 3 or cubes.shape[-2] < 3:
        raise ValueError(f"cube slices must be at least 3x3, got {cubes.shape[-1]}x{cubes.shape[-2]}")
    mag, bidx = _magnitude_and_bin(cubes, bins)
    onehot = bidx[:, :, None, :, :] == np.arange(bins)[None, None, :, None, None]
    return mag[:, :, None, :, :] * onehot, mag


def integrals_batch(cubes: np.ndarray, bins: int = CHANNEL_BINS) -> np.ndarray:
    """3-D summed-area tables ``(N, s_t + 1, s_y + 1, s_x + 1, B + 1)``.

    Channel ``B`` sums total gradient magnitude; keeping channels last puts
    a box corner's orientation and total sums in the same cache line.
    """
    cubes = np.asarray(cubes, dtype=np.float64)
    n, s_t, h, w = cubes.shape
    if h < 3 or w < 3:
        raise ValueError(f"cube slices must be at least 3x3, got {w}x{h}")
    sat = np.empty((n, s_t + 1, h + 1, w + 1, bins + 1))
    _integral_kernel(np.ascontiguousarray(cubes), bins, sat)
    return sat


def build_channels(cube, bins: int = CHANNEL_BINS) -> ChannelVolume:
    data = _cube_pixels(cube)
    chans, _ = channels_batch(data[None], bins)
    sat = integrals_batch(data[None], bins)[0]
    chans = chans[0]
    chans.setflags(write=False)
    sat.setflags(write=False)
    return ChannelVolume(chans, sat, bins)


@numba.njit(cache=True, nogil=True)
def _energy_kernel(sat, boxes, floor, out):
    bins = sat.shape[4] - 1
    for n in range(sat.shape[0]):
        a = sat[n]
        for k in range(boxes.shape[0]):
            x0, x1, y0, y1, t0, t1, o = (boxes[k, 0], boxes[k, 1], boxes[k, 2], boxes[k, 3],
                                         boxes[k, 4], boxes[k, 5], boxes[k, 6])
            num = (a[t1, y1, x1, o] - a[t1, y0, x1, o] - a[t1, y1, x0, o] + a[t1, y0, x0, o]
                   - a[t0, y1, x1, o] + a[t0, y0, x1, o] + a[t0, y1, x0, o] - a[t0, y0, x0, o])
            den = (a[t1, y1, x1, bins] - a[t1, y0, x1, bins] - a[t1, y1, x0, bins] + a[t1, y0, x0, bins]
                   - a[t0, y1, x1, bins] + a[t0, y0, x1, bins] + a[t0, y1, x0, bins] - a[t0, y0, x0, bins])
            if den < floor:
                out[n, k] = 0.0
            else:
                out[n, k] = min(max(num / den, 0.0), 1.0)


def box_energies(sat: np.ndarray, boxes: np.ndarray) -> np.ndarray:
    """Normalised energies for ``(K, 7)`` integer boxes over ``(N, ...)`` tables.

    Boxes with total energy below ``ENERGY_FLOOR`` are featureless and get 0.
    """
    boxes = np.ascontiguousarray(np.asarray(boxes, dtype=np.int64).reshape(-1, 7))
    out = np.empty((sat.shape[0], len(boxes)))
    _energy_kernel(np.ascontiguousarray(sat), boxes, ENERGY_FLOOR, out)
    return out


def gradient_energy(channels: ChannelVolume, box: CubeBox) -> float:
    box.check(channels.dims, channels.bins)
    e = box_energies(channels.integral[None], np.array([box.as_tuple()]))
    return float(e[0, 0])
