#!/usr/bin/env python3
"""
Command-line interface
Purpose: Run pipeline stages on files

    python cli.py [--seed N] [--config run.yaml] [--out-dir DIR] <command> ...

Exit codes: 0 ok, 2 input error, 3 stage failure.
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from agents.pipeline import (run_anchor_analysis, run_evaluate, run_fuse, run_localize, run_pipeline,
                             run_reid, run_sequences, run_simulation, run_track)
from agents.simulation import load_scenario
from utils.config import VERSION, RunConfig, load_run_config
from utils.errors import InputError, PipelineError

logger = logging.getLogger("rescuesight")

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_STAGE = 3


def _add_pf_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--pf-sigma", type=float, help="Measurement noise std in meters")
    parser.add_argument("--pf-n", type=int, help="Particles per human")
    parser.add_argument("--pf-vmax", type=float, help="Maximum walking speed in m/s")
    parser.add_argument("--pf-ess", type=float, help="Resample only when ESS < fraction * N")
    parser.add_argument("--dump-particles", action="store_true", default=None, help="Write particles.csv")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rescuesight",
                                     description="Aerial search-and-rescue human perception pipeline")
    parser.add_argument("--version", action="version", version=f"%(prog)s {VERSION}")
    parser.add_argument("--seed", type=int, help="Seed of every random draw")
    parser.add_argument("--config", type=Path, help="Run configuration (YAML)")
    parser.add_argument("--out-dir", help="Output directory")
    parser.add_argument("--log-level", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze-anchors", help="Anchor assignment coverage for standard vs custom scales")
    p.add_argument("--annotations", type=Path, required=True)
    p.add_argument("--image-size", type=int, nargs=2, metavar=("WIDTH", "HEIGHT"), required=True)
    p.add_argument("--upscale", type=float, nargs="+", default=[1.0], help="Image resize factors")
    p.add_argument("--k", type=int, help="Also cluster k anchor shapes with k-means")

    p = sub.add_parser("fuse", help="Merge optical and thermal detections")
    p.add_argument("--optical", type=Path, required=True)
    p.add_argument("--thermal", type=Path, required=True)
    p.add_argument("--calibration", type=Path, required=True)
    p.add_argument("--poses", type=Path)
    p.add_argument("--mode", choices=["or", "and"])

    p = sub.add_parser("track", help="Assign track IDs")
    p.add_argument("--detections", type=Path, required=True)
    p.add_argument("--poses", type=Path, help="Defines every frame of the sequence")

    p = sub.add_parser("localize", help="Triangulate tracks and reject by metric area")
    p.add_argument("--tracks", type=Path, required=True)
    p.add_argument("--poses", type=Path, required=True)
    p.add_argument("--calibration", type=Path, required=True)
    p.add_argument("--t-area", type=float, help="Area threshold in square meters")

    p = sub.add_parser("reid", help="Re-identify localized tracks")
    p.add_argument("--tracks", type=Path, required=True, help="localized.jsonl of the localize stage")
    p.add_argument("--localizations", type=Path, required=True)
    p.add_argument("--patches-dir", type=Path, help="Base directory of detection patches")
    _add_pf_flags(p)

    p = sub.add_parser("evaluate", help="fppi / miss-rate evaluation")
    p.add_argument("--annotations", type=Path, required=True)
    p.add_argument("--detections", nargs="+", required=True, metavar="LABEL=PATH",
                   help="One or more labelled detection files (a bare path is labelled 'detections')")
    p.add_argument("--plot", action="store_true", default=None, help="Write curves.svg")
    p.add_argument("--exclude-occluded", action="store_true", default=None)

    p = sub.add_parser("simulate", help="Generate pipeline inputs from a scenario")
    p.add_argument("--scenario", type=Path, required=True)

    p = sub.add_parser("pipeline", help="Run every stage end to end")
    p.add_argument("--scenario", type=Path, nargs="*", default=[], help="Scenario file(s), one run each")
    p.add_argument("--workers", type=int, default=1, help="Sequences run in parallel")
    p.add_argument("--plot", action="store_true", default=None)
    _add_pf_flags(p)
    return parser


def parse_detection_sets(values: Sequence[str]) -> Dict[str, Path]:
    sets: Dict[str, Path] = {}
    for value in values:
        label, sep, path = value.partition("=")
        if not sep:
            label, path = "detections", value
        if not label or not path:
            raise InputError(f"expected LABEL=PATH, got '{value}'")
        if label in sets:
            raise InputError(f"duplicate detection label '{label}'")
        sets[label] = Path(path)
    return sets


def overrides_from(args: argparse.Namespace) -> Dict[str, object]:
    get = lambda name: getattr(args, name, None)  # noqa: E731
    return {
        "seed": args.seed,
        "out_dir": args.out_dir,
        "log_level": args.log_level,
        "pf.sigma_z": get("pf_sigma"),
        "pf.n": get("pf_n"),
        "pf.v_max": get("pf_vmax"),
        "pf.ess_threshold": get("pf_ess"),
        "dump_particles": get("dump_particles"),
        "plot": get("plot"),
        "fusion.mode": get("mode"),
        "geometry.t_area": get("t_area"),
        "evaluation.exclude_occluded": get("exclude_occluded"),
    }


def configure_logging(level: str) -> None:
    logging.basicConfig(level=getattr(logging, level), stream=sys.stderr, force=True,
                        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s")


def _sequence_configs(cfg: RunConfig, scenarios: List[Path]) -> List[RunConfig]:
    if not scenarios:
        return [cfg]
    if len(scenarios) == 1:
        return [cfg.model_copy(update={"scenario": load_scenario(scenarios[0])})]
    configs = []
    for index, path in enumerate(scenarios):
        spec = load_scenario(path)
        out_dir = Path(cfg.out_dir) / f"{index:02d}_{spec.name}"
        configs.append(cfg.model_copy(update={"scenario": spec, "out_dir": str(out_dir)}))
    return configs


def dispatch(args: argparse.Namespace, cfg: RunConfig) -> None:
    out = Path(cfg.out_dir)
    command = args.command
    if command == "analyze-anchors":
        outputs = run_anchor_analysis(args.annotations, tuple(args.image_size), out, cfg.anchors,
                                      args.upscale, args.k, cfg.seed)
    elif command == "fuse":
        outputs = {"fused": run_fuse(args.optical, args.thermal, args.calibration, out, cfg.fusion, args.poses)}
    elif command == "track":
        outputs = {"tracks": run_track(args.detections, out, cfg.tracker, args.poses)}
    elif command == "localize":
        table, kept = run_localize(args.tracks, args.poses, args.calibration, out, cfg.geometry)
        outputs = {"localizations": table, "localized": kept}
    elif command == "reid":
        outputs = run_reid(args.tracks, args.localizations, out, args.patches_dir or args.tracks.parent,
                           cfg.reid, cfg.pf, cfg.seed, cfg.dump_particles)
    elif command == "evaluate":
        outputs = run_evaluate(args.annotations, parse_detection_sets(args.detections), out,
                               cfg.evaluation, cfg.plot)
    elif command == "simulate":
        outputs = run_simulation(load_scenario(args.scenario), out, cfg.seed)
    else:
        configs = _sequence_configs(cfg, args.scenario)
        manifests = run_sequences(configs, args.workers) if len(configs) > 1 else [run_pipeline(configs[0])]
        outputs = {c.out_dir: f"{len(m['outputs'])} outputs" for c, m in zip(configs, manifests)}
    for name, value in outputs.items():
        logger.info(f"{name}: {value}")


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_run_config(args.config, overrides_from(args))
        configure_logging(cfg.log_level)
        dispatch(args, cfg)
    except InputError as e:
        logger.error(f"Input error: {e}")
        return EXIT_INPUT
    except PipelineError as e:
        logger.error(f"Stage failure: {e}")
        return EXIT_STAGE
    except Exception as e:
        logger.exception(f"{args.command} failed: {e}")
        return EXIT_STAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
