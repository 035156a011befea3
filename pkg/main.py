import sys
import logging
import argparse

from config import LOG_LEVEL
from handlers import cmd_bench, cmd_scene, cmd_vp
from synth import PARAMETERIZATIONS, SCENARIOS

logger = logging.getLogger(__name__)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="axisline", description="Axis-anchored structural lines toolkit")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    bench = sub.add_parser("bench", help="run the line parameterization benchmark")
    bench.add_argument("--config", help="RunConfig JSON file")
    bench.add_argument("--seeds", type=int, help="number of seeds per cell")
    bench.add_argument("--seed", type=int, help="first seed")
    bench.add_argument("--out", help="output directory")
    bench.add_argument("--param", action="append", choices=PARAMETERIZATIONS, help="parameterization (repeatable)")
    bench.add_argument("--scenario", action="append", choices=SCENARIOS, help="scenario (repeatable)")
    bench.add_argument("--scene", help="benchmark a stored scene file instead of generated ones")
    bench.add_argument("--threads", type=int, help="parallel cells (default AXISLINE_THREADS)")
    bench.add_argument("--strict", action="store_true", help="exit 1 when any run diverges")
    bench.set_defaults(handler=cmd_bench)

    vp = sub.add_parser("vp", help="estimate vanishing points of one frame")
    vp.add_argument("segments", help="segment JSON file")
    vp.add_argument("--dv", default="0,0,1", help="world vertical direction x,y,z")
    vp.add_argument("--pose", default="0,0,0,0,0,0", help="T_cw as rotation vector and translation rx,ry,rz,tx,ty,tz")
    vp.add_argument("--intrinsics", help="fx,fy,cx,cy (default from the scene config)")
    vp.add_argument("--config", help="RunConfig JSON file")
    vp.add_argument("--out", help="VP result JSON path")
    vp.set_defaults(handler=cmd_vp)

    scene = sub.add_parser("scene", help="write a synthetic scene file")
    scene.add_argument("--config", help="RunConfig JSON file")
    scene.add_argument("--seed", type=int, help="scene seed")
    scene.add_argument("--scenario", choices=SCENARIOS, help="pose noise scenario")
    scene.add_argument("--out", help="scene JSON path")
    scene.set_defaults(handler=cmd_scene)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)

    # Configure logging
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else getattr(logging, LOG_LEVEL, logging.INFO),
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
    )
    logger.debug(f"[CLI] {args.command} {vars(args)}")
    return args.handler(args)


if __name__ == "__main__":
    try:
        sys.exit(main())
    except KeyboardInterrupt:
        logger.info("Interrupted")
        sys.exit(130)
