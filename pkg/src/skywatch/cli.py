"""Command-line entry point: ``skywatch <command> [options]``.

Every command writes a JSON run manifest (command line, effective
configuration, input and model hashes, seed, version, timing) next to its
primary output unless ``--manifest`` names another path.

Exit status: 0 on success, 1 on a runtime failure, 2 on a usage error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import time
from dataclasses import asdict, fields, replace

import numpy as np

from . import __version__, binio
from .cube_classifier import CubeClassifier
from .detector import DetectorConfig, detect
from .evalkit import (average_precision, avep_by_size, pr_curve, read_detections, read_ground_truth,
                      write_detections, write_pr_csv)
from .imagecore import FrameError, load_frame_sequence
from .pipeline import (TrainingConfig, compensation_summary, compensation_trials, fit_classifier,
                       fit_regressor)
from .shift_regressor import RegressorConfig, ShiftRegressor
from .synthgen import SynthConfig, generate_sequence, load_config, write_sequence

log = logging.getLogger("skywatch")

THREADS_ENV = "SKYWATCH_THREADS"
DEFAULT_SIZE_BINS = "10,35,75,inf"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


# ---------------------------------------------------------------------------
# manifests

def _hash_file(path: str, h=None):
    h = h or hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h


def hash_path(path: str) -> str:
    """SHA-256 of a file, or of a directory's sorted file names and contents.

    Run manifests inside a directory are skipped: they carry timestamps.
    """
    if os.path.isdir(path):
        h = hashlib.sha256()
        for name in sorted(os.listdir(path)):
            full = os.path.join(path, name)
            if os.path.isfile(full) and not name.endswith(".manifest.json"):
                h.update(name.encode() + b"\0")
                _hash_file(full, h)
        return h.hexdigest()
    return _hash_file(path).hexdigest()


class RunManifest:
    def __init__(self, command: str, argv: list[str]):
        self.data = {
            "command": command,
            "argv": list(argv),
            "version": __version__,
            "config": {},
            "inputs": {},
            "models": {},
            "outputs": {},
            "seed": None,
            "started": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        }
        self._t0 = time.perf_counter()

    def config(self, **values):
        self.data["config"].update(values)

    def input(self, *paths):
        for p in paths:
            self.data["inputs"][p] = hash_path(p)

    def model(self, *paths):
        for p in paths:
            self.data["models"][p] = hash_path(p)

    def output(self, *paths):
        for p in paths:
            self.data["outputs"][p] = hash_path(p)

    def write(self, path: str) -> None:
        self.data["wall_clock_s"] = round(time.perf_counter() - self._t0, 3)
        with open(path, "w") as fh:
            json.dump(self.data, fh, indent=2, sort_keys=True, default=_jsonable)
            fh.write("\n")


def _jsonable(v):
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.floating,)):
        return float(v)
    if isinstance(v, tuple):
        return list(v)
    raise TypeError(f"{type(v).__name__} is not JSON serialisable")


# ---------------------------------------------------------------------------
# option helpers

def _add_detector_options(p: argparse.ArgumentParser) -> None:
    defaults = DetectorConfig()
    for f in fields(DetectorConfig):
        if f.name == "threads":
            continue
        flag = "--" + f.name.replace("_", "-")
        p.add_argument(flag, dest="det_" + f.name, metavar="VALUE", default=None,
                       help=f"detector {f.name} (default {getattr(defaults, f.name)})")
    p.add_argument("--no-compensation", dest="det_compensation", action="store_const", const="false",
                   help="build cubes without motion compensation")
    p.add_argument("--threads", type=int, default=None,
                   help=f"worker threads (default ${THREADS_ENV} or 1)")


def _detector_config(args) -> DetectorConfig:
    opts = {k[4:]: v for k, v in vars(args).items() if k.startswith("det_") and v is not None}
    try:
        cfg = DetectorConfig.from_options(opts)
    except (ValueError, KeyError) as exc:
        raise UsageError(f"bad detector option: {exc}") from exc
    return replace(cfg, threads=_threads(args))


def _threads(args) -> int:
    n = getattr(args, "threads", None)
    if n is None:
        env = os.environ.get(THREADS_ENV)
        try:
            n = int(env) if env else 1
        except ValueError as exc:
            raise UsageError(f"{THREADS_ENV} must be an integer, got {env!r}") from exc
    if n < 1:
        raise UsageError("--threads must be >= 1")
    return n


def _sequences(frames_arg: str, gt_arg: str):
    """Comma-separated frame directories paired with ground-truth files."""
    dirs = [d for d in frames_arg.split(",") if d]
    gts = [g for g in gt_arg.split(",") if g]
    if len(dirs) != len(gts):
        raise UsageError(f"{len(dirs)} frame directories but {len(gts)} ground-truth files")
    return [(load_frame_sequence(d), read_ground_truth(g)) for d, g in zip(dirs, gts)], dirs + gts


def _manifest_path(args, primary: str) -> str:
    return args.manifest or primary + ".manifest.json"


# ---------------------------------------------------------------------------
# commands

def cmd_synth(args, man: RunManifest) -> int:
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    for item in args.set or []:
        key, _, value = item.partition("=")
        names = {f.name: f for f in fields(SynthConfig)}
        if key not in names:
            raise UsageError(f"unknown synth field {key!r}")
        from .synthgen import _coerce
        overrides[key] = _coerce(names[key].type, value)
    cfg = load_config(args.config, **overrides)
    if os.path.isfile(args.config):
        man.input(args.config)
    frames, gts, _ = generate_sequence(cfg)
    write_sequence(args.outdir, frames, gts, cfg)
    man.config(**asdict(cfg))
    man.data["seed"] = cfg.seed
    man.output(args.outdir)
    man.write(_manifest_path(args, os.path.join(args.outdir, "synth")))
    print(f"wrote {len(frames)} frames and {len(gts)} boxes to {args.outdir}")
    return 0


def cmd_train_regressor(args, man: RunManifest) -> int:
    seqs, inputs = _sequences(args.frames, args.gt)
    man.input(*inputs)
    rcfg = RegressorConfig(args.rounds, args.max_depth, args.shrinkage, args.min_leaf)
    try:
        rcfg.validate()
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    train = TrainingConfig(shifts_per_box=args.shifts_per_box, max_shift=args.max_shift,
                           regressor_seed=args.seed)
    model = fit_regressor(seqs, train, rcfg)
    model.save(args.out)
    man.config(regressor=asdict(rcfg), shifts_per_box=train.shifts_per_box, max_shift=train.max_shift)
    man.data["seed"] = args.seed
    man.model(args.out)
    man.write(_manifest_path(args, args.out))
    print(f"wrote shift regressor to {args.out}")
    return 0


def cmd_compensate(args, man: RunManifest) -> int:
    frames = load_frame_sequence(args.frames)
    gts = read_ground_truth(args.gt)
    model = ShiftRegressor.load(args.model)
    man.input(args.frames, args.gt)
    man.model(args.model)
    rng = np.random.default_rng(args.seed)
    cubes = compensation_trials(frames, gts, model, rng, args.cube_t, args.eps, args.max_iter, args.offset)
    summary = compensation_summary(cubes, args.cube_t)
    with open(args.report, "w") as fh:
        json.dump({"summary": summary, "cubes": cubes}, fh, indent=2, sort_keys=True)
        fh.write("\n")
    man.config(cube_t=args.cube_t, eps=args.eps, max_iter=args.max_iter, offset=args.offset)
    man.data["seed"] = args.seed
    man.output(args.report)
    man.write(_manifest_path(args, args.report))
    print(json.dumps(summary, sort_keys=True))
    return 0


def cmd_train_detector(args, man: RunManifest) -> int:
    det = _detector_config(args)
    mode = {"3d-hog": "hog3d", "hog3d": "hog3d", "energy": "energy"}.get(args.feature_mode)
    if mode is None:
        raise UsageError(f"unknown feature mode {args.feature_mode!r} (energy or 3d-hog)")
    seqs, inputs = _sequences(args.frames, args.gt)
    man.input(*inputs)
    regressor = ShiftRegressor.load(args.regressor)
    man.model(args.regressor)
    train = TrainingConfig(positive_jitter=args.jitter, negatives_per_positive=args.negatives,
                           rounds=args.rounds, pool_size=args.pool_size, classifier_seed=args.seed,
                           feature_mode=mode)
    model = fit_classifier(seqs, regressor, det, train)
    model.save(args.out)
    man.config(detector=asdict(det), training=asdict(train))
    man.data["seed"] = args.seed
    man.model(args.out)
    man.write(_manifest_path(args, args.out))
    print(f"wrote {model.T}-round {mode} classifier to {args.out}")
    return 0


def cmd_detect(args, man: RunManifest) -> int:
    det = _detector_config(args)
    frames = load_frame_sequence(args.frames)
    man.input(args.frames)
    regressor = ShiftRegressor.load(args.regressor)
    classifier = CubeClassifier.load(args.detector)
    man.model(args.regressor, args.detector)
    dets = detect(frames, regressor, classifier, det)
    write_detections(args.out, dets)
    man.config(detector=asdict(det))
    man.output(args.out)
    man.write(_manifest_path(args, args.out))
    print(f"wrote {len(dets)} detections to {args.out}")
    return 0


def _size_bins(text: str) -> list[float]:
    try:
        edges = [float(v) for v in text.split(",")]
    except ValueError as exc:
        raise UsageError(f"bad size bins {text!r}") from exc
    if len(edges) < 2 or any(b <= a for a, b in zip(edges, edges[1:])):
        raise UsageError("size bins must be at least two increasing edges")
    return edges


def cmd_eval(args, man: RunManifest) -> int:
    dets = read_detections(args.detections)
    gts = read_ground_truth(args.gt)
    man.input(args.detections, args.gt)
    dets = [d for d in dets if d.frame >= args.min_frame]
    gts = [g for g in gts if g.frame >= args.min_frame]
    if not gts:
        raise RuntimeError("no ground-truth boxes to evaluate against")
    curve = pr_curve(dets, gts, args.iou)
    ap = average_precision(curve)
    print(f"AveP {ap:.6f}")
    result = {"avep": ap}
    if args.by_size:
        rows = avep_by_size(dets, gts, _size_bins(args.size_bins), args.iou)
        for (lo, hi), v in rows:
            print(f"AveP[{lo:g},{hi:g}) {v:.6f}")
        result["by_size"] = [[lo, hi, v] for (lo, hi), v in rows]
    if args.pr:
        write_pr_csv(args.pr, curve)
        man.output(args.pr)
    man.config(iou=args.iou, min_frame=args.min_frame, by_size=args.by_size,
               size_bins=args.size_bins if args.by_size else None)
    man.data["result"] = result
    man.write(args.manifest or args.detections + ".eval.manifest.json")
    return 0


# ---------------------------------------------------------------------------
# parser

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="skywatch", description="Small moving-target detection in video.")
    p.add_argument("--version", action="version", version=f"skywatch {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", metavar="command", parser_class=_Parser)

    def command(name, help_text):
        sp = sub.add_parser(name, help=help_text, description=help_text,
                            formatter_class=argparse.ArgumentDefaultsHelpFormatter)
        sp.add_argument("--manifest", default=None, help="run manifest path")
        sp.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
        return sp

    sp = command("synth", "render a synthetic sequence (frames, gt.csv, synth.cfg)")
    sp.add_argument("config", help="shipped benchmark name or config file")
    sp.add_argument("outdir")
    sp.add_argument("--seed", type=int, default=None, help="override the config seed")
    sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config field")
    sp.set_defaults(run=cmd_synth)

    sp = command("train-regressor", "train the shift regressor on annotated frames")
    sp.add_argument("frames", help="frame directory (comma-separated for several)")
    sp.add_argument("gt", help="ground-truth CSV (comma-separated, one per frame directory)")
    sp.add_argument("out")
    d = RegressorConfig()
    sp.add_argument("--rounds", type=int, default=d.rounds)
    sp.add_argument("--max-depth", type=int, default=d.max_depth)
    sp.add_argument("--shrinkage", type=float, default=d.shrinkage)
    sp.add_argument("--min-leaf", type=int, default=d.min_leaf)
    t = TrainingConfig()
    sp.add_argument("--shifts-per-box", type=int, default=t.shifts_per_box)
    sp.add_argument("--max-shift", type=float, default=t.max_shift, help="largest shift, patch pixels")
    sp.add_argument("--seed", type=int, default=t.regressor_seed)
    sp.set_defaults(run=cmd_train_regressor)

    sp = command("compensate", "report how well compensation re-centres ground-truth cubes")
    sp.add_argument("frames")
    sp.add_argument("gt")
    sp.add_argument("model")
    sp.add_argument("report", help="JSON report path")
    sp.add_argument("--cube-t", type=int, default=DetectorConfig().cube_t)
    sp.add_argument("--eps", type=float, default=DetectorConfig().eps)
    sp.add_argument("--max-iter", type=int, default=DetectorConfig().max_iter)
    sp.add_argument("--offset", type=float, default=8.0, help="largest initial displacement, patch pixels")
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(run=cmd_compensate)

    sp = command("train-detector", "train the cube classifier")
    sp.add_argument("frames", help="frame directory (comma-separated for several)")
    sp.add_argument("gt", help="ground-truth CSV (comma-separated, one per frame directory)")
    sp.add_argument("regressor")
    sp.add_argument("out")
    sp.add_argument("--feature-mode", default="energy", help="energy or 3d-hog")
    sp.add_argument("--rounds", type=int, default=t.rounds)
    sp.add_argument("--pool-size", type=int, default=t.pool_size)
    sp.add_argument("--jitter", type=int, default=t.positive_jitter, help="positive cubes per box")
    sp.add_argument("--negatives", type=float, default=t.negatives_per_positive,
                    help="negative cubes per positive")
    sp.add_argument("--seed", type=int, default=t.classifier_seed)
    _add_detector_options(sp)
    sp.set_defaults(run=cmd_train_detector)

    sp = command("detect", "run the detector over a frame directory")
    sp.add_argument("frames")
    sp.add_argument("regressor")
    sp.add_argument("detector")
    sp.add_argument("out", help="detections CSV path")
    _add_detector_options(sp)
    sp.set_defaults(run=cmd_detect)

    sp = command("eval", "average precision of detections against ground truth")
    sp.add_argument("detections")
    sp.add_argument("gt")
    sp.add_argument("--by-size", action="store_true", help="also report AveP per size bin")
    sp.add_argument("--size-bins", default=DEFAULT_SIZE_BINS, help="bin edges in pixels")
    sp.add_argument("--iou", type=float, default=0.5, help="match threshold")
    sp.add_argument("--min-frame", type=int, default=0, help="ignore earlier frames")
    sp.add_argument("--pr", default=None, help="write the precision-recall curve CSV here")
    sp.set_defaults(run=cmd_eval)
    return p


def run(argv) -> int:
    argv = list(argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not getattr(args, "command", None):
            parser.print_usage(sys.stderr)
            raise UsageError("no command given")
        if args.verbose:
            logging.basicConfig(level=logging.INFO, format="%(name)s: %(message)s")
        return args.run(args, RunManifest(args.command, argv))
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (FrameError, binio.FormatError, OSError, ValueError, RuntimeError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
