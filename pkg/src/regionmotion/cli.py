"""Command-line front end.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical error.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time

import numpy as np

from . import disentangle as dz
from . import flow as fl
from . import heatmap as hm
from . import motion as mo
from . import synth
from .errors import DataError, NumericalError, RegionCountMismatch, RegionMotionError
from .tensor_io import (
    ensure_dir,
    read_bytes_image,
    read_image,
    read_tensor,
    write_bytes_image,
    write_image,
    write_tensor,
)

log = logging.getLogger("regionmotion")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _write_json(doc, path) -> None:
    text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    if str(path) == "-":
        sys.stdout.write(text)
        return
    with open(path, "w", encoding="utf-8") as f:
        f.write(text)


def _config_block(args) -> dict:
    skip = {"func", "verbose", "threads", "output"}
    return {k: v for k, v in sorted(vars(args).items()) if k not in skip}


def _heatmap_stack(path) -> np.ndarray:
    t = read_tensor(path).astype(np.float64)
    if t.ndim == 2:
        t = t[None]
    if t.ndim != 3:
        raise DataError(f"{path}: heatmap stack must be K x H x W, got dims {t.shape}")
    return np.stack([hm.normalize(h) for h in t])


# ---------------------------------------------------------------------------
# subcommands


def cmd_measure(args) -> int:
    heats = _heatmap_stack(args.heatmaps)
    if args.mode == "pca":
        regions = [mo.pca_motion(h) for h in heats]
    else:
        if args.params is None:
            raise DataError("--mode regression requires --params")
        params = read_tensor(args.params).astype(np.float64)
        if params.ndim == 3:
            params = params[None]
        if params.shape[0] != len(heats):
            raise DataError(f"{params.shape[0]} parameter blocks for {len(heats)} heatmaps")
        regions = [mo.regression_motion(h, p) for h, p in zip(heats, params)]
    mo.write_motions(mo.MotionSet(tuple(regions)), args.output)
    return EXIT_OK


def cmd_compose(args) -> int:
    src = mo.read_motions(args.source)
    drv = mo.read_motions(args.driving)
    if src.K != drv.K:
        raise RegionCountMismatch(f"source has K={src.K}, driving has K={drv.K}")
    regions = tuple(mo.compose(s, d) for s, d in zip(src.regions, drv.regions))
    background = None
    if src.background is not None and drv.background is not None:
        background = mo.compose(src.background, drv.background)
    mo.write_motions(mo.MotionSet(regions, background), args.output)
    return EXIT_OK


def cmd_flow(args) -> int:
    motions = mo.read_motions(args.motions)
    heats = _heatmap_stack(args.heatmaps)
    if len(heats) != motions.K:
        raise RegionCountMismatch(f"motions have K={motions.K} but heatmap stack has K={len(heats)}")
    assign = fl.oracle_assignment(heats, args.bg_threshold)
    write_tensor(fl.synthesize_flow(motions, assign), args.output)
    return EXIT_OK


def cmd_warp(args) -> int:
    img = read_image(args.image)
    flow = read_tensor(args.flow)
    out = fl.warp_image(img, flow)
    if args.confidence:
        conf = read_tensor(args.confidence)
        out = fl.apply_confidence(out, conf.reshape(conf.shape[:2]) if conf.ndim == 3 else conf)
    write_image(out, args.output)
    return EXIT_OK


def cmd_toy_rect(args) -> int:
    samples = synth.gen_rectangles(args.n, args.size, args.seed)
    report = synth.toy_angle_eval(samples, threads=args.threads)
    report["config"] = _config_block(args)
    _write_json(report, args.output)
    log.info("toy-rect: mean %.4f deg, max %.4f deg", report["mean"], report["max"])
    return EXIT_OK


def cmd_puppet(args) -> int:
    cfg = synth.PuppetConfig(
        parts=args.parts,
        frames=args.frames,
        size=args.size,
        body_scale=args.body_scale,
        static=args.static,
    )
    scene = synth.gen_puppet(cfg, args.seed)
    synth.save_scene(scene, args.output)
    return EXIT_OK


def cmd_animate(args) -> int:
    scene = synth.load_scene(args.scene)
    model = dz.load_model(args.model) if args.model else None
    report, frames = synth.scene_reconstruction_error(
        scene, args.mode, model, args.bg_threshold, threads=args.threads, return_frames=True
    )
    ensure_dir(os.path.join(args.output, "frames"))
    for t, img in enumerate(frames, start=1):
        write_image(img, os.path.join(args.output, "frames", f"{t:04d}.ppm"))
    report["config"] = _config_block(args)
    _write_json(report, os.path.join(args.output, "report.json"))
    log.info("animate %s: mean L1 %.5f", args.mode, report["mean"])
    return EXIT_OK


def scene_pairs(scene_dirs, seed: int, max_pairs: int | None = None) -> list[tuple[mo.MotionSet, mo.MotionSet]]:
    """All ordered (source, driving) frame pairs within each scene, PCA-measured."""
    pairs = []
    for d in scene_dirs:
        scene = synth.load_scene(d)
        sets = [synth.measure_frame(scene.heatmaps(t)) for t in range(scene.T)]
        pairs.extend((a, b) for i, a in enumerate(sets) for j, b in enumerate(sets) if i != j)
    if max_pairs is not None and len(pairs) > max_pairs:
        rng = np.random.default_rng(seed)
        keep = np.sort(rng.choice(len(pairs), size=max_pairs, replace=False))
        pairs = [pairs[i] for i in keep]
    return pairs


def cmd_disentangle_train(args) -> int:
    pairs = scene_pairs(args.scenes, args.seed)
    cfg = dz.TrainConfig(
        learning_rate=args.lr,
        batch_size=args.batch_size,
        total_pairs=args.pairs,
        seed=args.seed,
        scale_range=tuple(args.scale_range),
    )
    model = dz.train(pairs, cfg)
    dz.save_model(model, args.output)
    return EXIT_OK


def cmd_disentangle_apply(args) -> int:
    model = dz.load_model(args.model)
    out = dz.disentangled_motions(model, mo.read_motions(args.source), mo.read_motions(args.driving))
    mo.write_motions(out, args.output)
    return EXIT_OK


def cmd_segment(args) -> int:
    heats = _heatmap_stack(args.heatmaps)
    labels = synth.segment(heats, args.threshold)
    if labels.max() > 255:
        raise DataError("more than 255 regions cannot be stored as PGM labels")
    write_bytes_image(labels.astype(np.uint8), args.output)
    return EXIT_OK


def cmd_iou(args) -> int:
    a = read_bytes_image(args.a)[..., 0]
    b = read_bytes_image(args.b)[..., 0]
    _write_json({"iou": synth.foreground_iou(a, b)}, args.output)
    return EXIT_OK


def random_gradcheck_heatmap(rng: np.random.Generator, size: int = 16) -> np.ndarray:
    """Random positive heatmap under an anisotropic Gaussian envelope."""
    theta = rng.uniform(0.0, np.pi)
    major = rng.uniform(0.12 * size, 0.3 * size)
    sig = np.array([major, major * rng.uniform(0.3, 0.7)])
    u = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
    cov = u @ np.diag(sig**2) @ u.T
    mu = rng.uniform(0.35 * size, 0.65 * size, size=2)
    env = hm.rasterize_gaussian(mu, cov, (size, size))
    return hm.normalize(env * rng.uniform(0.2, 1.0, size=(size, size)))


def cmd_gradcheck(args) -> int:
    rng = np.random.default_rng(args.seed)
    worst = 0.0
    failures = 0
    for trial in range(args.trials):
        h = random_gradcheck_heatmap(rng, args.size)
        err = mo.gradient_relative_error(mo.pca_motion_gradient(h), mo.finite_difference_gradient(h))
        worst = max(worst, err)
        ok = err < args.tolerance
        failures += not ok
        log.info("trial %d: relative error %.3e %s", trial, err, "ok" if ok else "FAIL")
    print(f"gradcheck: {args.trials - failures}/{args.trials} passed, worst relative error {worst:.3e}")
    return EXIT_OK if failures == 0 else EXIT_NUMERIC


# ---------------------------------------------------------------------------
# parser


def _common(p: argparse.ArgumentParser, suppress: bool) -> None:
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    p.add_argument("--seed", type=int, default=d(0), help="random seed (default 0)")
    p.add_argument("--threads", type=int, default=d(1), help="worker threads (default 1)")
    p.add_argument("--verbose", action="store_true", default=d(False))


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="regionmotion", description="Region motion measurement and animation toolkit.")
    _common(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, func, help_text):
        p = sub.add_parser(name, help=help_text)
        _common(p, suppress=True)
        p.set_defaults(func=func)
        return p

    p = add("measure", cmd_measure, "heatmap stack -> motion JSON")
    p.add_argument("--heatmaps", required=True)
    p.add_argument("--mode", choices=("pca", "regression"), default="pca")
    p.add_argument("--params", help="K x 4 x H x W regression parameter maps")
    p.add_argument("-o", "--output", required=True)

    p = add("compose", cmd_compose, "driving-to-source motions per region")
    p.add_argument("--source", required=True)
    p.add_argument("--driving", required=True)
    p.add_argument("-o", "--output", required=True)

    p = add("flow", cmd_flow, "dense flow from motions and driving heatmaps")
    p.add_argument("--motions", required=True, help="driving-to-source motion JSON")
    p.add_argument("--heatmaps", required=True)
    p.add_argument("--bg-threshold", type=float, default=fl.DEFAULT_BG_THRESHOLD)
    p.add_argument("-o", "--output", required=True)

    p = add("warp", cmd_warp, "warp an image with a flow")
    p.add_argument("--image", required=True)
    p.add_argument("--flow", required=True)
    p.add_argument("--confidence")
    p.add_argument("-o", "--output", required=True)

    p = add("toy-rect", cmd_toy_rect, "rotated-rectangle angle experiment")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--size", type=int, required=True)
    p.add_argument("-o", "--output", required=True)

    p = add("puppet", cmd_puppet, "generate a synthetic articulated scene")
    p.add_argument("--parts", type=int, required=True)
    p.add_argument("--frames", type=int, required=True)
    p.add_argument("--size", type=int, default=128)
    p.add_argument("--body-scale", type=float, default=1.0)
    p.add_argument("--static", action="store_true", help="identity motions in every frame")
    p.add_argument("-o", "--output", required=True)

    p = add("animate", cmd_animate, "animate frame 0 of a scene and report L1 error")
    p.add_argument("--scene", required=True)
    p.add_argument("--mode", choices=("standard", "relative", "disentangled"), default="standard")
    p.add_argument("--model")
    p.add_argument("--bg-threshold", type=float, default=fl.DEFAULT_BG_THRESHOLD)
    p.add_argument("-o", "--output", required=True)

    p = add("disentangle-train", cmd_disentangle_train, "train the shape/pose model on scenes")
    p.add_argument("--scenes", nargs="+", required=True)
    p.add_argument("--pairs", type=int, default=100_000)
    p.add_argument("--batch-size", type=int, default=256)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--scale-range", type=float, nargs=2, default=list(dz.TrainConfig().scale_range))
    p.add_argument("-o", "--output", required=True)

    p = add("disentangle-apply", cmd_disentangle_apply, "pose from driving, shape from source")
    p.add_argument("--model", required=True)
    p.add_argument("--source", required=True)
    p.add_argument("--driving", required=True)
    p.add_argument("-o", "--output", required=True)

    p = add("segment", cmd_segment, "co-part segmentation of a heatmap stack")
    p.add_argument("--heatmaps", required=True)
    p.add_argument("--threshold", type=float, default=fl.DEFAULT_BG_THRESHOLD)
    p.add_argument("-o", "--output", required=True)

    p = add("iou", cmd_iou, "foreground IoU of two label images")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("-o", "--output", default="-")

    p = add("gradcheck", cmd_gradcheck, "analytic vs finite-difference PCA Jacobian")
    p.add_argument("--trials", type=int, required=True)
    p.add_argument("--size", type=int, default=16)
    p.add_argument("--tolerance", type=float, default=1e-4)
    return parser


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    for key, default in (("seed", 0), ("threads", 1), ("verbose", False)):
        if not hasattr(args, key):
            setattr(args, key, default)
    if args.threads < 1:
        print("regionmotion: error: --threads must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    start = time.perf_counter()
    try:
        code = args.func(args)
    except NumericalError as exc:
        print(f"regionmotion: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, RegionMotionError, OSError, ValueError) as exc:
        print(f"regionmotion: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DATA
    log.info("%s finished in %.2fs", args.command, time.perf_counter() - start)
    return code


def main() -> None:
    sys.exit(run())
