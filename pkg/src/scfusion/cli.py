"""Command-line entry point: ``scfusion {simulate,run,suite,export-ply}``.

Exit status is 0 on success, 2 for configuration errors and 3 for failures
while running.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from .errors import ConfigError, ScFusionError, UnknownSuite
from .pipeline import (
    FUSION_MODES,
    SUITES,
    PipelineConfig,
    build_frames,
    export_point_cloud,
    load_posteriors,
    run_experiment_suite,
    run_sequence,
)
from .simulator import save_sequence

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


def _common(p: argparse.ArgumentParser, out_required: bool = True):
    p.add_argument("--config", type=Path, help="TOML configuration file")
    p.add_argument("--out", type=Path, required=out_required, help="output directory")
    p.add_argument("--seed", type=int, help="master random seed")
    p.add_argument("--frames", type=int, help="number of frames to simulate")


def _pipeline_flags(p: argparse.ArgumentParser):
    p.add_argument("--lambda", dest="lambda_m", type=float, help="uncertainty gate for correspondences (m)")
    p.add_argument("--ransac-iters", type=int, help="RANSAC iteration budget")
    p.add_argument("--inlier-px", type=float, help="RANSAC inlier threshold (px)")
    p.add_argument("--nis-alpha", type=float, help="NIS test significance level")
    p.add_argument("--no-gating", action="store_true", help="disable the NIS gate")
    p.add_argument("--dump-diagnostics", action="store_true", help="write per-frame NIS/gain CSVs")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="scfusion", description="Kalman filtering of scene-coordinate maps on synthetic sequences.")
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("simulate", help="render a synthetic sequence to disk")
    _common(p)
    p.add_argument("--blur-kernel", type=int, help="motion-blur kernel length (px)")
    p.add_argument("--blur-every", type=int, help="blur every n-th frame")
    p.add_argument("--trim", type=int, nargs=2, metavar=("FIRST", "LAST"), help="drop frames FIRST..LAST")

    p = sub.add_parser("run", help="run the filter over a sequence")
    _common(p)
    _pipeline_flags(p)
    p.add_argument("--sequence", type=Path, help="sequence directory written by 'simulate'")
    p.add_argument("--mode", choices=FUSION_MODES, help="fusion mode")
    p.add_argument("--flow-images", action="store_true", help="write flow/*.ppm false-color images")

    p = sub.add_parser("suite", help="run a named experiment suite")
    p.add_argument("name", help=f"one of {', '.join(sorted(SUITES))}")
    _common(p)
    _pipeline_flags(p)

    p = sub.add_parser("export-ply", help="point cloud from the posteriors of a finished run")
    p.add_argument("run_dir", type=Path, help="directory written by 'run'")
    p.add_argument("--out", type=Path, required=True, help="output directory")
    p.add_argument("--lambda", dest="lambda_m", type=float, default=0.05, help="uncertainty threshold (m)")
    return parser


def config_from_args(args) -> PipelineConfig:
    cfg = PipelineConfig.from_toml(args.config) if getattr(args, "config", None) else PipelineConfig()
    seq = cfg.sequence
    deg = cfg.degradation
    ransac = cfg.ransac
    changes = {}
    try:
        if getattr(args, "frames", None) is not None:
            seq = dataclasses.replace(seq, n_frames=args.frames)
        if getattr(args, "sequence", None) is not None:
            seq = dataclasses.replace(seq, path=str(args.sequence))
        if getattr(args, "blur_kernel", None) is not None:
            deg = dataclasses.replace(deg, blur_kernel_px=args.blur_kernel)
        if getattr(args, "blur_every", None) is not None:
            deg = dataclasses.replace(deg, blur_every_n=args.blur_every)
        if getattr(args, "trim", None) is not None:
            deg = dataclasses.replace(deg, trim_range=tuple(args.trim))
        if getattr(args, "lambda_m", None) is not None:
            ransac = dataclasses.replace(ransac, lambda_m=args.lambda_m)
        if getattr(args, "ransac_iters", None) is not None:
            ransac = dataclasses.replace(ransac, max_iterations=args.ransac_iters)
        if getattr(args, "inlier_px", None) is not None:
            ransac = dataclasses.replace(ransac, inlier_threshold_px=args.inlier_px)
        if getattr(args, "seed", None) is not None:
            changes["seed"] = args.seed
        if getattr(args, "mode", None) is not None:
            changes["fusion_mode"] = args.mode
        if getattr(args, "nis_alpha", None) is not None:
            changes["nis_alpha"] = args.nis_alpha
        if getattr(args, "no_gating", False):
            changes["nis_alpha"] = None
        if getattr(args, "dump_diagnostics", False):
            changes["dump_diagnostics"] = True
        if getattr(args, "flow_images", False):
            changes["write_flow_images"] = True
        return cfg.replace(sequence=seq, degradation=deg, ransac=ransac, output_dir=str(args.out), **changes)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def _cmd_simulate(args) -> int:
    cfg = config_from_args(args)
    frames, K = build_frames(cfg)
    path = save_sequence(frames, K, args.out, {"config": cfg.to_dict()})
    print(f"wrote {len(frames)} frames to {path.parent}")
    return EXIT_OK


def _cmd_run(args) -> int:
    cfg = config_from_args(args)
    report = run_sequence(cfg)
    s = report.summary()
    print(
        f"{s['frames']} frames, {s['failed_frames']} failed; median error "
        f"{s['median_translation_m'] * 100:.2f} cm / {s['median_rotation_deg']:.2f} deg; "
        f"mean coordinate error {s['coord_error_mean_m'] * 100:.2f} cm -> {args.out}"
    )
    return EXIT_OK


def _cmd_suite(args) -> int:
    cfg = config_from_args(args)
    report = run_experiment_suite(args.name, cfg)
    print(json.dumps(report.extra, indent=2, default=str))
    return EXIT_OK


def _cmd_export_ply(args) -> int:
    maps = load_posteriors(args.run_dir)
    args.out.mkdir(parents=True, exist_ok=True)
    n = export_point_cloud(maps, args.lambda_m, args.out / "cloud.ply")
    print(f"wrote {n} points to {args.out / 'cloud.ply'}")
    return EXIT_OK


COMMANDS = {"simulate": _cmd_simulate, "run": _cmd_run, "suite": _cmd_suite, "export-ply": _cmd_export_ply}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.verb](args)
    except (ConfigError, UnknownSuite) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ScFusionError, OSError, ValueError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
