"""Command-line entry point for twinuplift."""

import argparse
import logging
import sys
import traceback
from collections.abc import Callable, Sequence
from typing import Any

from commands import benchmark, evaluate, simulate, tune
from config import ExperimentConfig
from exceptions import EXIT_USAGE, UpliftError, UsageError

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"

HANDLERS: dict[str, Callable[[ExperimentConfig], int]] = {
    "simulate": simulate.run,
    "tune": tune.run,
    "benchmark": benchmark.run,
    "evaluate": evaluate.run,
}

COMMAND_HELP = {
    "simulate": "Write a synthetic RCT dataset (parametric or bootstrap) and its true uplift",
    "tune": "Select alpha and then the learning rate by repeated validation splits",
    "benchmark": "Run every model over repeated splits and aggregate Qini and Kendall scores",
    "evaluate": "Score a CSV with a saved model and report Qini and Kendall",
}


def _key_value(text: str) -> tuple[str, str]:
    key, sep, value = text.partition("=")
    if not sep or not key.strip():
        raise argparse.ArgumentTypeError(f"expected KEY=VALUE, got {text!r}")
    return key.strip(), value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="twinuplift", description="Twin-network uplift modelling experiments."
    )
    subparsers = parser.add_subparsers(dest="command", required=True)
    for command, help_text in COMMAND_HELP.items():
        sub = subparsers.add_parser(command, help=help_text, description=help_text)
        sub.add_argument("--config", help="Flat JSON configuration file")
        sub.add_argument("--seed", help="Seed for splits, initialisation and generation")
        sub.add_argument("--out", help="Output directory")
        sub.add_argument("--runs", help="Number of repeated runs (benchmark)")
        sub.add_argument("--workers", help="Worker processes (default: CPU count)")
        sub.add_argument(
            "--qini-literal",
            action="store_const",
            const=True,
            help="Use the control term without the treated/control count ratio",
        )
        sub.add_argument("--qini-grid", help="Qini curve grid size K")
        sub.add_argument("--kendall-bins", help="Number of Kendall uplift bins")
        sub.add_argument("--log-level", help="DEBUG, INFO, WARNING or ERROR")
        sub.add_argument("--data", help="Input CSV with treatment and outcome columns")
        if command == "evaluate":
            sub.add_argument("--model", help="Saved model file")
        if command == "simulate":
            sub.add_argument("--mode", help="parametric or bootstrap")
        if command in ("simulate", "benchmark"):
            sub.add_argument("--generator-model", help="Saved model used as bootstrap generator")
        sub.add_argument(
            "--set",
            dest="overrides",
            action="append",
            type=_key_value,
            default=[],
            metavar="KEY=VALUE",
            help="Override any configuration key (repeatable)",
        )
    return parser


def flags_from_args(args: argparse.Namespace) -> dict[str, Any]:
    """Explicitly given flags as configuration keys; ``--set`` entries lose to named flags."""
    flags: dict[str, Any] = dict(args.overrides)
    for name, value in vars(args).items():
        if name in ("command", "overrides") or value is None:
            continue
        flags[name] = value
    return flags


def configure_logging(level: str) -> None:
    logging.basicConfig(level=level, format=LOG_FORMAT, stream=sys.stderr, force=True)


def main(argv: Sequence[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        # argparse exits with 2 on bad flags, which would read as a data error.
        return EXIT_USAGE if exc.code else 0
    configure_logging("INFO")
    logger = logging.getLogger("main")
    try:
        config = ExperimentConfig(args.command, flags_from_args(args))
        configure_logging(config.log_level)
        logger.debug("resolved configuration: %s", config.as_dict())
        return HANDLERS[args.command](config)
    except UsageError as exc:
        print(f"{exc.__class__.__name__}: {exc.message}", file=sys.stderr)
        return exc.exit_code
    except UpliftError as exc:
        logger.error("%s: %s", exc.__class__.__name__, exc.message)
        if exc.details:
            logger.debug("details: %s", exc.details)
        return exc.exit_code
    except Exception as e:
        logger.error("Unhandled exception (%s): %s", e.__class__.__name__, e)
        logger.error(traceback.format_exc())
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
