import logging
from argparse import Namespace
from pathlib import Path

import numpy as np

from config import RunConfig, load_run_config, with_overrides
from errors import AxisLineError, ConfigError
from geometry import CameraIntrinsics, Pose
from messages import get_bench_table, get_scene_summary, get_vp_summary
from scheduler import run_benchmark_concurrent
from storage import read_scene, read_segments, write_bench_csv, write_bench_summary, write_scene, write_vp_result
from synth import generate_scene
from vanish import estimate_frame

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_DIVERGED = 1
EXIT_INPUT = 2


def parse_vector(text: str, size: int, name: str) -> np.ndarray:
    """Comma-separated floats of a fixed length"""
    try:
        values = [float(x) for x in text.split(",")]
    except ValueError as e:
        raise ConfigError(name, f"expected {size} comma-separated numbers, got {text!r}") from e
    if len(values) != size:
        raise ConfigError(name, f"expected {size} numbers, got {len(values)}")
    return np.array(values)


def load_config(args: Namespace) -> RunConfig:
    path = getattr(args, "config", None)
    return load_run_config(path) if path else RunConfig()


def cmd_bench(args: Namespace) -> int:
    """Run the parameterization benchmark and write CSV + JSON summary"""
    try:
        cfg = load_config(args)
        cfg = with_overrides(
            cfg,
            bench__seeds=args.seeds,
            bench__params=tuple(args.param) if args.param else None,
            bench__scenarios=tuple(args.scenario) if args.scenario else None,
            bench__threads=args.threads,
            scene__seed=args.seed,
            output__dir=args.out,
        )
        scene = read_scene(args.scene) if args.scene else None
        report = run_benchmark_concurrent(
            cfg.scene,
            cfg.bench.params,
            cfg.bench.scenarios,
            cfg.bench.seeds,
            lm_cfg=cfg.lm,
            policy=cfg.axes,
            information=cfg.information,
            threads=cfg.bench.threads,
            scene=scene,
        )
        write_bench_csv(report, cfg.output.csv_path)
        write_bench_summary(report, cfg.output.summary_path)
    except (ConfigError, AxisLineError, ValueError, OSError) as e:
        logger.error(f"[CLI] {e}")
        return EXIT_INPUT

    print(get_bench_table(report, cfg.bench.params))

    if args.strict and report.any_diverged:
        logger.error("[CLI] At least one run diverged")
        return EXIT_DIVERGED
    return EXIT_OK


def cmd_vp(args: Namespace) -> int:
    """Vertical-prior VP estimation on a segment file"""
    try:
        cfg = load_config(args)
        ids, segments = read_segments(args.segments)
        d_v = parse_vector(args.dv, 3, "dv")
        pose_vec = parse_vector(args.pose, 6, "pose")
        pose = Pose.from_rotvec(pose_vec[:3], pose_vec[3:])
        if args.intrinsics:
            k = CameraIntrinsics(*parse_vector(args.intrinsics, 4, "intrinsics"))
        else:
            k = cfg.scene.intrinsics
        result = estimate_frame(segments, d_v, pose, k, cfg.vp, ids)
        if args.out:
            write_vp_result(result, args.out)
    except (ConfigError, AxisLineError, ValueError, OSError) as e:
        logger.error(f"[CLI] {e}")
        return EXIT_INPUT

    print(get_vp_summary(result))
    return EXIT_OK


def cmd_scene(args: Namespace) -> int:
    """Write a self-contained scene file for reproducible benchmark runs"""
    try:
        cfg = load_config(args)
        cfg = with_overrides(cfg, scene__seed=args.seed, scene__scenario=args.scenario)
        scene = generate_scene(cfg.scene)
        out = Path(args.out) if args.out else Path(cfg.output.dir) / f"scene_{cfg.scene.scenario}_{cfg.scene.seed}.json"
        write_scene(scene, out)
    except (ConfigError, AxisLineError, ValueError, OSError) as e:
        logger.error(f"[CLI] {e}")
        return EXIT_INPUT

    print(get_scene_summary(scene, out))
    return EXIT_OK
