"""Command line entry point: `explore`.

Exit codes: 0 exploration complete, 1 error, 2 time budget exhausted.
"""

from __future__ import annotations

import argparse
import sys

from .driver import StartPoseError, run_exploration
from .scenarios import PRESETS, ScenarioError


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="explore",
        description="Frontier-based exploration of a simulated MAV scenario.",
    )
    parser.add_argument("--scenario", help="scenario file to run")
    parser.add_argument(
        "--preset", choices=sorted(PRESETS), help="bundled scenario preset"
    )
    parser.add_argument("--seed", type=int, help="override the scenario seed")
    parser.add_argument("--out", help="directory for metrics.csv and map.txt")
    parser.add_argument(
        "--timeout", type=float, help="wall-clock budget in seconds"
    )
    parser.add_argument(
        "--dump-entropy-images",
        action="store_true",
        help="write per-candidate entropy/depth PGMs under OUT/entropy/",
    )
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if bool(args.scenario) == bool(args.preset):
        print("error: give exactly one of --scenario or --preset", file=sys.stderr)
        return 1
    overrides = {"seed": args.seed} if args.seed is not None else None
    try:
        result = run_exploration(
            args.scenario or args.preset,
            overrides=overrides,
            out_dir=args.out,
            wall_timeout=args.timeout,
            dump_entropy_images=args.dump_entropy_images,
            log=print,
        )
    except (ScenarioError, StartPoseError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    mean, std = result.metrics.plan_time_stats()
    print(
        f"status={result.status} iterations={result.iterations} "
        f"sim_time={result.sim_time:.1f}s"
    )
    print(
        f"explored {result.explored_m3:.2f} m3 of {result.observable_m3:.2f} m3 "
        f"observable ({100.0 * result.coverage:.1f}%)"
    )
    print(f"plan_time_ms: mean {mean:.1f} +- {std:.1f} over {len(result.metrics.rows)} iterations")
    if result.warning:
        print(f"warning: {result.warning}")
    return result.exit_code


if __name__ == "__main__":
    sys.exit(main())
