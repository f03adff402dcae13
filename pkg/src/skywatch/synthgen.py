"""Deterministic synthetic sequences: small moving targets over drifting texture.

Every random draw comes from a generator seeded by ``(seed, stream, index)``
so any frame can be rendered on its own and the output is bit-identical
across runs.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, fields, replace
from importlib import resources

import numpy as np

from .evalkit import GroundTruthBox, write_ground_truth
from .imagecore import Frame, write_image

SHAPES = ("disc", "cross", "blob")
_STREAM_TARGETS = 1
_STREAM_BACKGROUND = 2
_STREAM_NOISE = 3


@dataclass(frozen=True)
class SynthConfig:
    width: int = 160
    height: int = 120
    frames: int = 40
    targets: int = 2
    shapes: str = "disc,cross,blob"
    # minor/major axis ratio of blob ellipses
    blob_aspect_min: float = 0.35
    blob_aspect_max: float = 0.6
    # GT box side; the drawn object spans side / box_margin
    side_min: float = 10.0
    side_max: float = 100.0
    box_margin: float = 1.5
    contrast_min: float = 0.2
    contrast_max: float = 0.35
    polarity: str = "mixed"
    speed_min: float = 0.0
    speed_max: float = 3.0
    jitter_amp: float = 0.0
    jitter_period: float = 12.0
    # side grows geometrically from side_min to side_max with a fixed centre
    collision: bool = False
    bg_cell: float = 24.0
    bg_octaves: int = 3
    bg_contrast: float = 0.3
    drift_x: float = 0.0
    drift_y: float = 0.0
    noise_sigma: float = 0.02
    seed: int = 0

    def validate(self) -> None:
        if self.width < 1 or self.height < 1 or self.frames < 1 or self.targets < 0:
            raise ValueError("frame size and count must be positive")
        if not 0 < self.side_min <= self.side_max:
            raise ValueError("need 0 < side_min <= side_max")
        if not 0 <= self.contrast_min <= self.contrast_max:
            raise ValueError("need 0 <= contrast_min <= contrast_max")
        if not 0 <= self.speed_min <= self.speed_max:
            raise ValueError("need 0 <= speed_min <= speed_max")
        if not 0 < self.blob_aspect_min <= self.blob_aspect_max <= 1:
            raise ValueError("need 0 < blob_aspect_min <= blob_aspect_max <= 1")
        if self.box_margin < 1.0:
            raise ValueError("box_margin must be >= 1")
        if self.polarity not in ("dark", "bright", "mixed"):
            raise ValueError(f"unknown polarity {self.polarity!r}")
        for s in self.shape_list():
            if s not in SHAPES:
                raise ValueError(f"unknown shape {s!r}")
        if self.side_max >= min(self.width, self.height) - 1:
            raise ValueError(f"target side {self.side_max} does not fit a {self.width}x{self.height} frame")

    def shape_list(self) -> list[str]:
        return [s.strip() for s in self.shapes.split(",") if s.strip()]


# ---------------------------------------------------------------------------
# config files

def _coerce(kind, text: str):
    if kind in (bool, "bool"):
        low = text.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {text!r}")
    if kind in (int, "int"):
        return int(text)
    if kind in (float, "float"):
        return float(text)
    return text.strip()


def parse_config(text: str, base: SynthConfig = SynthConfig()) -> SynthConfig:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    types = {f.name: f.type for f in fields(SynthConfig)}
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key=value, got {raw!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in types:
            raise ValueError(f"line {lineno}: unknown key {key!r}")
        values[key] = _coerce(types[key], val)
    cfg = replace(base, **values)
    cfg.validate()
    return cfg


def format_config(cfg: SynthConfig) -> str:
    lines = []
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        lines.append(f"{f.name} = {str(v).lower() if isinstance(v, bool) else v}")
    return "\n".join(lines) + "\n"


def named_configs() -> list[str]:
    return sorted(p.name[:-4] for p in resources.files("skywatch.configs").iterdir() if p.name.endswith(".cfg"))


def load_config(name_or_path: str, **overrides) -> SynthConfig:
    """A shipped benchmark name (``bench-easy``) or a path to a config file."""
    if os.path.exists(name_or_path):
        with open(name_or_path) as fh:
            text = fh.read()
    else:
        res = resources.files("skywatch.configs") / f"{name_or_path}.cfg"
        if not res.is_file():
            raise ValueError(f"{name_or_path}: no such config file or benchmark "
                             f"(known: {', '.join(named_configs())})")
        text = res.read_text()
    cfg = parse_config(text)
    if overrides:
        cfg = replace(cfg, **overrides)
        cfg.validate()
    return cfg


# ---------------------------------------------------------------------------
# background

class ValueNoise:
    """Periodic multi-octave value noise with smoothstep interpolation."""

    def __init__(self, rng: np.random.Generator, cell: float, octaves: int, period: int = 64):
        self.cell = cell
        self.lattices = [rng.random((period * 2 ** o, period * 2 ** o)) for o in range(octaves)]

    def __call__(self, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
        total = np.zeros(np.broadcast(rows, cols).shape)
        norm = 0.0
        for o, lat in enumerate(self.lattices):
            cell = self.cell / 2 ** o
            amp = 0.5 ** o
            total += amp * _lattice_lookup(lat, rows / cell, cols / cell)
            norm += amp
        return total / norm


def _lattice_lookup(lat: np.ndarray, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    n_r, n_c = lat.shape
    u0 = np.floor(u)
    v0 = np.floor(v)
    fu = u - u0
    fv = v - v0
    fu = fu * fu * (3 - 2 * fu)
    fv = fv * fv * (3 - 2 * fv)
    r0 = u0.astype(np.int64) % n_r
    c0 = v0.astype(np.int64) % n_c
    r1 = (r0 + 1) % n_r
    c1 = (c0 + 1) % n_c
    top = lat[r0, c0] * (1 - fv) + lat[r0, c1] * fv
    bot = lat[r1, c0] * (1 - fv) + lat[r1, c1] * fv
    return top * (1 - fu) + bot * fu


# ---------------------------------------------------------------------------
# targets

@dataclass(frozen=True)
class _Target:
    shape: str
    side: float
    contrast: float
    sign: float
    start: tuple[float, float]
    velocity: tuple[float, float]
    phase: tuple[float, float]
    aspect: float
    angle: float


def _coverage(shape: str, dr: np.ndarray, dc: np.ndarray, extent: float, aspect: float,
              angle: float) -> np.ndarray:
    """Anti-aliased coverage from a signed distance (pixels, negative inside)."""
    if shape == "disc":
        sdf = np.hypot(dr, dc) - extent / 2
    elif shape == "cross":
        half_len, half_w = extent / 2, extent / 8

        def box(a, b, ha, hb):
            qa, qb = np.abs(a) - ha, np.abs(b) - hb
            return np.hypot(np.maximum(qa, 0), np.maximum(qb, 0)) + np.minimum(np.maximum(qa, qb), 0)
        sdf = np.minimum(box(dr, dc, half_w, half_len), box(dr, dc, half_len, half_w))
    else:
        ca, sa = np.cos(angle), np.sin(angle)
        x = ca * dc + sa * dr
        y = -sa * dc + ca * dr
        a, b = extent / 2, extent / 2 * aspect
        k = np.hypot(x / a, y / b)
        sdf = (k - 1.0) * b
    return np.clip(0.5 - sdf, 0.0, 1.0)


def _fold(p: float, lo: float, hi: float) -> float:
    span = hi - lo
    if span <= 0:
        return (lo + hi) / 2
    q = (p - lo) % (2 * span)
    return lo + (q if q <= span else 2 * span - q)


class Sequence:
    def __init__(self, cfg: SynthConfig):
        cfg.validate()
        self.cfg = cfg
        rng = np.random.default_rng([cfg.seed, _STREAM_BACKGROUND])
        self.noise = ValueNoise(rng, cfg.bg_cell, cfg.bg_octaves)
        self.targets = self._draw_targets()

    def _draw_targets(self) -> list[_Target]:
        cfg = self.cfg
        rng = np.random.default_rng([cfg.seed, _STREAM_TARGETS])
        shapes = cfg.shape_list()
        out = []
        for k in range(cfg.targets):
            shape = shapes[int(rng.integers(len(shapes)))]
            side = cfg.side_min if cfg.collision else float(rng.uniform(cfg.side_min, cfg.side_max))
            reach = cfg.side_max if cfg.collision else side
            row = float(rng.uniform(reach / 2, cfg.height - 1 - reach / 2))
            col = float(rng.uniform(reach / 2, cfg.width - 1 - reach / 2))
            contrast = float(rng.uniform(cfg.contrast_min, cfg.contrast_max))
            if cfg.polarity == "mixed":
                sign = 1.0 if rng.random() < 0.5 else -1.0
            else:
                sign = 1.0 if cfg.polarity == "bright" else -1.0
            heading = float(rng.uniform(0, 2 * np.pi))
            speed = 0.0 if cfg.collision else float(rng.uniform(cfg.speed_min, cfg.speed_max))
            phase = (float(rng.uniform(0, 2 * np.pi)), float(rng.uniform(0, 2 * np.pi)))
            aspect = float(rng.uniform(cfg.blob_aspect_min, cfg.blob_aspect_max))
            angle = float(rng.uniform(0, np.pi))
            out.append(_Target(shape, side, contrast, sign, (row, col),
                               (speed * np.sin(heading), speed * np.cos(heading)), phase, aspect, angle))
        return out

    def side_at(self, target: _Target, t: int) -> float:
        cfg = self.cfg
        if cfg.collision and cfg.frames > 1:
            return cfg.side_min * (cfg.side_max / cfg.side_min) ** (t / (cfg.frames - 1))
        return target.side

    def center_at(self, target: _Target, t: int) -> tuple[float, float]:
        cfg = self.cfg
        side = self.side_at(target, t)
        w = 2 * np.pi / cfg.jitter_period if cfg.jitter_period else 0.0
        row = target.start[0] + target.velocity[0] * t + cfg.jitter_amp * (np.sin(w * t + target.phase[0]) - np.sin(target.phase[0]))
        col = target.start[1] + target.velocity[1] * t + cfg.jitter_amp * (np.sin(w * t + target.phase[1]) - np.sin(target.phase[1]))
        row = _fold(row, side / 2, cfg.height - 1 - side / 2)
        col = _fold(col, side / 2, cfg.width - 1 - side / 2)
        return row, col

    def background(self, t: int) -> np.ndarray:
        cfg = self.cfg
        rows = np.arange(cfg.height, dtype=np.float64)[:, None] + cfg.drift_y * t
        cols = np.arange(cfg.width, dtype=np.float64)[None, :] + cfg.drift_x * t
        return 0.5 + cfg.bg_contrast * (self.noise(rows, cols) - 0.5)

    def render(self, t: int) -> tuple[np.ndarray, list[GroundTruthBox]]:
        cfg = self.cfg
        img = self.background(t)
        clean_bg = img.copy()
        boxes = []
        rr = np.arange(cfg.height, dtype=np.float64)[:, None]
        cc = np.arange(cfg.width, dtype=np.float64)[None, :]
        for tg in self.targets:
            side = self.side_at(tg, t)
            row, col = self.center_at(tg, t)
            extent = side / cfg.box_margin
            cov = _coverage(tg.shape, rr - row, cc - col, extent, tg.aspect, tg.angle)
            full = cov >= 1.0
            if not full.any():
                full = cov >= cov.max()
            level = float(np.mean(clean_bg[full])) + tg.sign * tg.contrast
            img = img * (1 - cov) + level * cov
            diff = abs(float(np.mean(img[full] - clean_bg[full])))
            if diff < cfg.contrast_min - 1e-9:
                raise AssertionError(f"target contrast {diff:.4f} below configured {cfg.contrast_min}")
            boxes.append(GroundTruthBox(t, row, col, side))
        if cfg.noise_sigma > 0:
            rng = np.random.default_rng([cfg.seed, _STREAM_NOISE, t])
            img = img + rng.normal(0.0, cfg.noise_sigma, img.shape)
        return np.clip(img, 0.0, 1.0), boxes


def generate_sequence(cfg: SynthConfig):
    """Render every frame.

    Returns ``(frames, ground_truth, annotations)`` where annotations are
    ``(frame_index, (row, col), side)`` tuples for shift-sample generation.
    """
    seq = Sequence(cfg)
    frames, gts = [], []
    for t in range(cfg.frames):
        px, boxes = seq.render(t)
        frames.append(Frame(px, t))
        gts.extend(boxes)
    annotations = [(g.frame, (g.row, g.col), g.side) for g in gts]
    return frames, gts, annotations


def write_sequence(outdir: str, frames, gts, cfg: SynthConfig | None = None) -> None:
    """``frame_NNNN.png`` files, ``gt.csv`` and (optionally) ``synth.cfg``."""
    os.makedirs(outdir, exist_ok=True)
    for f in frames:
        write_image(os.path.join(outdir, f"frame_{f.index:04d}.png"), f.pixels)
    write_ground_truth(os.path.join(outdir, "gt.csv"), gts)
    if cfg is not None:
        with open(os.path.join(outdir, "synth.cfg"), "w") as fh:
            fh.write(format_config(cfg))
