"""Command-line front end.

Each subcommand is a thin wrapper over one pipeline stage, reading and
writing only the documented interchange formats, so any stage can be rerun
from disk. Exit codes: 0 success, 2 I/O, 3 config/parse, 4 invalid input,
5 insufficient or degenerate data, 6 numerical failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import fileio, matching, propagation, recon, rotfilter, synth
from .config import PipelineConfig, load_config
from .errors import (
    BehindCameraError,
    DegenerateGeometryError,
    InsufficientDataError,
    InvalidInputError,
    NumericalFailureError,
    UndefinedMetricError,
)
from .matching import SeedSet
from .pipeline import run_pipeline
from .pnp import flow_epe, gt_rigid_flow

logger = logging.getLogger("flowdepth")

EXIT_IO = 2
EXIT_CONFIG = 3
EXIT_INVALID = 4
EXIT_DEGENERATE = 5
EXIT_NUMERICAL = 6


def load_gray(path) -> np.ndarray:
    """Load a PGM/PPM image as float grayscale in [0, 1]."""
    path = Path(path)
    if path.suffix == ".ppm":
        rgb = fileio.read_ppm(path)
        return np.asarray(rgb, dtype=float).mean(axis=-1) / 255.0
    return fileio.u8_to_image(fileio.read_pgm(path))


def load_depth(path) -> np.ndarray:
    """Load depth from PFM (scene units) or 16-bit PGM (millimeters)."""
    path = Path(path)
    if path.suffix == ".pgm":
        return fileio.u16_mm_to_depth(fileio.read_pgm(path))
    return fileio.read_pfm(path).astype(float)


def _config_from_args(args) -> PipelineConfig:
    cfg = load_config(args.config) if args.config else PipelineConfig()
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    return cfg


def cmd_synth(args) -> int:
    cfg = _config_from_args(args)
    t0 = time.time()
    manifest = synth.corpus(args.preset, args.n, args.out, rng_seed=cfg.seed)
    logger.info("stage=synth preset=%s n=%d wall=%.2fs manifest=%s", args.preset, args.n, time.time() - t0, manifest)
    return 0


def cmd_match(args) -> int:
    cfg = _config_from_args(args)
    mc = cfg.matching
    t0 = time.time()
    img_a = load_gray(args.image_a)
    img_b = load_gray(args.image_b)
    corners = matching.detect_corners(img_a, max_count=mc.max_corners, quality=mc.quality)
    seeds = matching.match_seeds(
        img_a, img_b, corners,
        patch=mc.patch, search_radius=mc.search_radius,
        min_score=mc.min_score, min_margin=mc.min_margin,
    )
    fileio.write_seeds(args.out, seeds.positions, seeds.flows)
    logger.info("stage=match corners=%d seeds=%d wall=%.2fs", len(corners), len(seeds), time.time() - t0)
    return 0


def cmd_flow(args) -> int:
    cfg = _config_from_args(args)
    t0 = time.time()
    img_a = load_gray(args.image_a)
    img_b = load_gray(args.image_b)
    positions, flows = fileio.read_seeds(args.seeds)
    seeds = SeedSet(positions, flows)
    flow = propagation.solve_flow(img_a, img_b, seeds, cfg.flow_config())
    fileio.write_flo(args.out, flow)
    logger.info("stage=flow seeds=%d wall=%.2fs out=%s", len(seeds), time.time() - t0, args.out)
    return 0


def cmd_filter(args) -> int:
    cfg = _config_from_args(args)
    t0 = time.time()
    entries = []
    with open(args.manifest, newline="") as f:
        import csv

        for row in csv.DictReader(f):
            entries.append((row["pair_id"], row["flow_path"]))
    report = rotfilter.filter_sequence(entries, cfg.ransac_config(), cfg.filter.sample_stride)
    rotfilter.write_verdicts(args.out, report)
    frac = "na" if report.discard_fraction is None else f"{report.discard_fraction:.3f}"
    logger.info("stage=filter pairs=%d discard_fraction=%s wall=%.2fs", len(entries), frac, time.time() - t0)
    return 0


def cmd_oracle(args) -> int:
    cfg = _config_from_args(args)
    t0 = time.time()
    load_gray(args.image_a)  # existence/format validation only; the oracle is geometric
    load_gray(args.image_b)
    depth = load_depth(args.depth)
    k = fileio.read_intrinsics(args.intrinsics)
    positions, flows = fileio.read_seeds(args.seeds)
    result = gt_rigid_flow(
        depth, SeedSet(positions, flows), k,
        ransac_iterations=cfg.oracle.ransac_iterations,
        inlier_px=cfg.oracle.inlier_px,
        rng_seed=cfg.seed,
    )
    fileio.write_flo(args.out, result.flow)
    logger.info(
        "stage=oracle seeds=%d inliers=%d wall=%.2fs out=%s",
        len(positions), int(result.seed_inliers.sum()), time.time() - t0, args.out,
    )
    return 0


def cmd_recon(args) -> int:
    cfg = _config_from_args(args)
    t0 = time.time()
    sample = Path(args.sample_dir)
    img_a = load_gray(sample / "img_a.pgm")
    img_b = load_gray(sample / "img_b.pgm")
    k = fileio.read_intrinsics(sample / "intrinsics.txt")
    flow_path = Path(args.flow) if args.flow else None
    if flow_path is None:
        est = sample / "flow_est.flo"
        flow_path = est if est.exists() else sample / "flow.flo"
    flow = fileio.read_flo(flow_path).astype(float)
    problem = recon.ReconProblem(
        target=img_a,
        sources=[img_b],
        supervision_flows=[flow],
        intrinsics=k,
        weights=cfg.loss_weights(),
        config=cfg.recon_config(),
    )
    solution = recon.solve(problem)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    fileio.write_pfm(out / "depth.pfm", solution.depth.astype(np.float32))
    fileio.write_poses(out / "pose.txt", solution.poses)
    logger.info(
        "stage=recon sample=%s loss=%.4e collapsed=%s wall=%.2fs",
        sample.name, float(solution.loss_trace.min()), solution.collapsed, time.time() - t0,
    )
    return 0


def cmd_eval(args) -> int:
    t0 = time.time()
    if args.kind == "depth":
        pred = load_depth(args.predicted)
        gt = load_depth(args.ground_truth)
        metrics = recon.depth_metrics(pred, gt, median_scale=True)
        text = recon.DepthMetrics.CSV_HEADER + "\n" + metrics.csv_row() + "\n"
    else:
        pred = fileio.read_flo(args.predicted).astype(float)
        gt = fileio.read_flo(args.ground_truth).astype(float)
        epe = flow_epe(pred, gt, np.ones(pred.shape[:2], dtype=bool))
        text = f"epe\n{epe:.6f}\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    logger.info("stage=eval kind=%s wall=%.2fs", args.kind, time.time() - t0)
    return 0


def cmd_pipeline(args) -> int:
    cfg = _config_from_args(args)
    t0 = time.time()
    outcomes = run_pipeline(args.dataset_dir, args.out, cfg, jobs=args.jobs)
    kept = sum(o.verdict == "keep" for o in outcomes)
    discarded = sum(o.verdict == "discard" for o in outcomes)
    errors = sum(o.verdict == "error" for o in outcomes)
    logger.info(
        "stage=pipeline samples=%d kept=%d discarded=%d errors=%d wall=%.2fs",
        len(outcomes), kept, discarded, errors, time.time() - t0,
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="flowdepth", description=__doc__)
    parser.add_argument("--config", help="TOML config overriding stage defaults")
    parser.add_argument("--seed", type=int, default=None, help="seed for all randomized stages")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a labeled synthetic corpus")
    p.add_argument("preset", choices=synth.PRESETS)
    p.add_argument("n", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("match", help="detect and match sparse flow seeds")
    p.add_argument("image_a")
    p.add_argument("image_b")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_match)

    p = sub.add_parser("flow", help="dense flow from seeds by optimized propagation")
    p.add_argument("image_a")
    p.add_argument("image_b")
    p.add_argument("seeds")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_flow)

    p = sub.add_parser("filter", help="pure-rotation verdicts for a flow manifest")
    p.add_argument("manifest", help="CSV with pair_id,flow_path columns")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_filter)

    p = sub.add_parser("oracle", help="ground-truth rigid flow from depth + seeds")
    p.add_argument("image_a")
    p.add_argument("image_b")
    p.add_argument("depth")
    p.add_argument("seeds")
    p.add_argument("--intrinsics", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("recon", help="depth and pose for one sample directory")
    p.add_argument("sample_dir")
    p.add_argument("--flow", help="supervision flow override (.flo)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_recon)

    p = sub.add_parser("eval", help="compare predicted depth or flow to ground truth")
    p.add_argument("predicted")
    p.add_argument("ground_truth")
    p.add_argument("--kind", choices=("depth", "flow"), required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("pipeline", help="full match/flow/filter/recon/eval run")
    p.add_argument("dataset_dir")
    p.add_argument("--out", required=True)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_pipeline)
    return parser


_ERROR_EXIT = [
    (NumericalFailureError, EXIT_NUMERICAL),
    ((InsufficientDataError, DegenerateGeometryError, BehindCameraError, UndefinedMetricError), EXIT_DEGENERATE),
    (InvalidInputError, EXIT_INVALID),
    (OSError, EXIT_IO),
]


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(message)s", stream=sys.stderr)
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.config:  # surface config problems with their own exit code
            try:
                load_config(args.config)
            except InvalidInputError as exc:
                print(f'error kind=ConfigError msg="{exc}"', file=sys.stderr)
                return EXIT_CONFIG
        return args.func(args)
    except Exception as exc:
        for types, code in _ERROR_EXIT:
            if isinstance(exc, types):
                print(f'error kind={type(exc).__name__} msg="{exc}"', file=sys.stderr)
                return code
        raise


if __name__ == "__main__":
    sys.exit(main())
