"""
Main application entry point for the grid simulator.

Subcommands:
    validate SCENARIO         list every broken invariant of a scenario file
    run SCENARIO [flags]      simulate and write a run directory
    report OUT_DIR            print the statistics of a finished run

Exit codes: 0 success, 1 violations or simulation errors, 2 usage errors,
3 unreadable or missing files, 130 interrupted.
"""

import argparse
import os
import sys
from dataclasses import replace
from fractions import Fraction
from typing import List, Optional

from dotenv import load_dotenv

from src.logging_config import LogContext, get_logger, setup_logging
from src.models import GridSimError, Scenario
from src.parser import ScenarioParser, format_violations, validate_scenario
from src.report import format_report, load_manifest, summarize_run, write_run
from src.simulation_service import SimulationService

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_INTERRUPTED = 130

logger = get_logger(__name__)


def configure_logging() -> None:
    """Set up logging from the environment (a ``.env`` file is honored)."""
    load_dotenv()
    setup_logging(
        log_level=os.getenv("LOG_LEVEL", "INFO"),
        log_dir=os.getenv("LOG_DIR", "logs"),
        enable_console=True,
        enable_file=os.getenv("GRIDSIM_LOG_FILE", "1") != "0",
        json_format=os.getenv("LOG_FORMAT", "text").lower() == "json",
    )


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be a positive integer, got {text}")
    return value


def _epsilon(text: str) -> Fraction:
    try:
        value = Fraction(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text}") from None
    if not 0 < value < 1:
        raise argparse.ArgumentTypeError(f"epsilon must lie in (0, 1), got {text}")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gridsim",
        description="Smart grid coordination simulator",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  %(prog)s validate scenarios/three_house.json
  %(prog)s run scenarios/three_house.json --out runs/three_house
  %(prog)s run scenarios/tracking.json --iterations 1953 --seed 7 --out runs/t
  %(prog)s report runs/t
        """,
    )
    commands = parser.add_subparsers(dest="command", required=True)

    validate = commands.add_parser("validate", help="Check a scenario file")
    validate.add_argument("scenario", help="Path to the scenario document")

    run = commands.add_parser("run", help="Run a simulation")
    run.add_argument("scenario", help="Path to the scenario document")
    run.add_argument("--out", default="runs/latest", help="Output directory")
    run.add_argument("--seed", type=int, help="Random seed (default: scenario's)")
    run.add_argument(
        "--iterations", type=_positive_int, help="Iterations (default: scenario's)"
    )
    run.add_argument(
        "--max-feedback-rounds",
        type=_positive_int,
        help="Feedback rounds per iteration before giving up on consensus",
    )
    run.add_argument(
        "--epsilon", type=_epsilon, help="Feedback coefficient in (0, 1), e.g. 0.05"
    )

    report = commands.add_parser("report", help="Summarize a finished run")
    report.add_argument("out_dir", help="Run output directory")
    return parser


def parse_arguments(argv: Optional[List[str]] = None) -> argparse.Namespace:
    """
    Parse command-line arguments.

    Returns:
        Parsed arguments
    """
    return build_parser().parse_args(argv)


def apply_overrides(scenario: Scenario, args: argparse.Namespace) -> Scenario:
    """Scenario with its configuration overridden by command-line flags."""
    overrides = {
        "seed": args.seed,
        "iterations": args.iterations,
        "max_feedback_rounds": args.max_feedback_rounds,
        "epsilon": args.epsilon,
    }
    overrides = {name: value for name, value in overrides.items() if value is not None}
    if not overrides:
        return scenario
    logger.debug(f"Configuration overrides: {overrides}")
    return replace(scenario, config=replace(scenario.config, **overrides))


def cmd_validate(path: str) -> int:
    """Print every violation of a scenario file, one per line."""
    parser = ScenarioParser()
    scenario = parser.parse(parser.read(path))
    violations = validate_scenario(scenario)
    if violations:
        print(format_violations(violations))
        logger.info(f"{path}: {len(violations)} violation(s)")
        return EXIT_FAILURE
    print(f"{path}: OK")
    return EXIT_OK


def cmd_run(args: argparse.Namespace) -> int:
    """Run a scenario and write its run directory."""
    parser = ScenarioParser()
    scenario = apply_overrides(parser.load(parser.read(args.scenario)), args)

    service = SimulationService(scenario)
    with LogContext(logger, "Run", command="run", iterations=scenario.config.iterations):
        manifest = write_run(service, args.out, args.scenario)

    print(format_report(summarize_run(args.out), manifest))
    return EXIT_OK


def cmd_report(out_dir: str) -> int:
    """Print the statistics of a finished run."""
    manifest = load_manifest(out_dir)
    print(format_report(summarize_run(out_dir), manifest))
    return EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    """
    Main application entry point.

    Returns:
        Exit code (0 for success, non-zero for error)
    """
    configure_logging()

    try:
        args = parse_arguments(argv)
    except SystemExit as e:
        # argparse exits 0 for --help and 2 for usage errors
        return e.code if isinstance(e.code, int) else EXIT_USAGE

    try:
        logger.info(f"gridsim {args.command} started", extra={"command": args.command})
        if args.command == "validate":
            return cmd_validate(args.scenario)
        if args.command == "run":
            return cmd_run(args)
        return cmd_report(args.out_dir)

    except GridSimError as e:
        logger.error(f"{args.command} failed: {e}")
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_IO if e.code == "IO_ERROR" else EXIT_FAILURE

    except KeyboardInterrupt:
        logger.warning("Interrupted by user (KeyboardInterrupt)")
        print("\nInterrupted.", file=sys.stderr)
        return EXIT_INTERRUPTED


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
