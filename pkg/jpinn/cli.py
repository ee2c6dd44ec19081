"""
Command-line entry point.

Every subcommand resolves its settings (profile defaults, environment,
optional ``--config`` JSON, then flags), writes them next to its outputs
and maps toolkit errors to exit codes: 2 configuration, 3 data,
4 numeric failure.
"""

import argparse
import os
import sys
from pathlib import Path
from typing import List, Optional

from jpinn.config import load_run_config
from jpinn.exceptions import CFLViolationError, DataValidationError, JPinnError
from jpinn.services.pipeline_service import PipelineService
from jpinn.services.training_service import MODES
from jpinn.utils.logging import get_logger, setup_logging

logger = get_logger(__name__)

MAX_REPORTED_ROWS = 20


def _common(parser: argparse.ArgumentParser, data: bool = False) -> None:
    parser.add_argument("--config", type=Path, default=None, help="JSON run configuration")
    parser.add_argument("--out", type=Path, required=True, help="Output directory")
    parser.add_argument("--seed", type=int, default=None, help="Master seed (overrides the config)")
    parser.add_argument("--profile", choices=["desk", "full"], default=None, help="Settings profile")
    if data:
        parser.add_argument("--data", type=Path, required=True, help="Dataset CSV")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="jpinn", description="Joint physics-informed NO2/NOx regression toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="Simulate a scenario and write a dataset CSV")
    _common(p)
    p.add_argument("--scenario", default=None, help="Scenario file or bundled scenario name")

    p = sub.add_parser("train", help="Train one model on a single site split")
    _common(p, data=True)
    p.add_argument("--mode", choices=MODES, default="joint")

    p = sub.add_parser("ensemble", help="Train bootstrap members and estimate intervals")
    _common(p, data=True)
    p.add_argument("--mode", choices=MODES, default="joint")
    p.add_argument("--jobs", type=int, default=None, help="Worker threads")

    p = sub.add_parser("evaluate", help="Metrics tables for a train or ensemble output")
    _common(p)
    p.add_argument("--run", type=Path, required=True, help="Directory holding predictions/*.csv")

    p = sub.add_parser("importance", help="Permutation importance of every covariate")
    _common(p, data=True)
    p.add_argument("--model", type=Path, required=True, help="Model snapshot")
    p.add_argument("--repeats", type=int, default=5)

    p = sub.add_parser("compare", help="Compare modes over several seeds")
    _common(p, data=True)
    p.add_argument("--modes", default="joint,baseline-no-physics", help="Comma-separated modes")
    p.add_argument("--seeds", type=int, default=5, help="Number of seeds, starting at --seed")

    p = sub.add_parser("reproduce", help="Run the full desk-scale pipeline")
    _common(p)
    p.add_argument("--scenario", default=None)
    p.add_argument("--jobs", type=int, default=None)
    return parser


def _report(error: JPinnError) -> None:
    print(f"error: {error.message}", file=sys.stderr)
    if isinstance(error, CFLViolationError):
        print(f"  {error.ratio_name} ratio = {error.ratio:.6g} (limit {error.limit:g})", file=sys.stderr)
    if isinstance(error, DataValidationError):
        for row in error.row_errors[:MAX_REPORTED_ROWS]:
            print(f"  row {row['row']}: {row['field']}: {row['message']}", file=sys.stderr)
        hidden = len(error.row_errors) - MAX_REPORTED_ROWS
        if hidden > 0:
            print(f"  ... {hidden} more", file=sys.stderr)
    elif error.details:
        print(f"  details: {error.details}", file=sys.stderr)


def run(args: argparse.Namespace) -> None:
    overrides = {"seed": args.seed}
    if args.profile:
        overrides["profile"] = args.profile
    settings = load_run_config(args.config, **overrides)
    level = os.getenv("JPINN_LOG_LEVEL", settings.logging.log_level)
    setup_logging(
        level=level,
        format_type=settings.logging.log_format,
        log_file=settings.logging.log_file,
        max_file_size=settings.logging.log_max_size_mb * 1024 * 1024,
        backup_count=settings.logging.log_backup_count,
    )
    pipeline = PipelineService(settings, args.out)

    if args.command == "simulate":
        pipeline.simulate(args.scenario)
    elif args.command == "train":
        pipeline.train(args.data, args.mode)
    elif args.command == "ensemble":
        pipeline.ensemble(args.data, args.mode, args.jobs)
    elif args.command == "evaluate":
        pipeline.evaluate(args.run)
    elif args.command == "importance":
        pipeline.importance(args.model, args.data, args.repeats)
    elif args.command == "compare":
        modes = [m.strip() for m in args.modes.split(",") if m.strip()]
        seeds = [settings.seed + k for k in range(args.seeds)]
        pipeline.compare(args.data, modes, seeds)
    elif args.command == "reproduce":
        pipeline.reproduce(args.scenario, args.jobs)


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        run(args)
    except JPinnError as e:
        _report(e)
        logger.error("command_failed", command=args.command, error_type=type(e).__name__, exit_code=e.exit_code)
        return e.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
