"""Command-line interface for specsense."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Sequence

from . import __version__
from .config import SpecsenseConfig, load_config
from .errors import ConfigError, SpecsenseError
from .runner import Command, SpecsenseRunner

USAGE_EXIT_CODE = ConfigError.exit_code
OS_ERROR_EXIT_CODE = 2


class _Parser(argparse.ArgumentParser):
    """Usage errors exit with the configuration error code."""

    def error(self, message: str) -> None:  # type: ignore[override]
        self.print_usage(sys.stderr)
        self.exit(USAGE_EXIT_CODE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="specsense",
        description="Federated spectrum occupancy detection: synthesise captures, "
        "extract features, run baselines and federated experiments.",
    )
    parser.add_argument(
        "--version", action="version", version=f"%(prog)s {__version__}"
    )
    parser.add_argument(
        "command",
        choices=[command.value for command in Command],
        help="Pipeline step to run.",
    )
    parser.add_argument(
        "--config", type=Path, help="Path to a specsense TOML configuration file."
    )
    parser.add_argument(
        "--out", type=Path, help="Output directory (default: specsense-out)."
    )
    parser.add_argument("--seed", type=int, help="Master seed for every random stream.")
    parser.add_argument(
        "--workers", type=int, help="Threads used for synthesis, extraction and training."
    )
    parser.add_argument(
        "--paper-scale",
        "--full-scale",
        dest="full_scale",
        action="store_true",
        help="Synthesise 10,000 noise windows and 1,000 windows per gain level.",
    )
    parser.add_argument(
        "--root",
        type=Path,
        help="Directory searched for specsense.toml / pyproject.toml (default: cwd).",
    )
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument(
        "--verbose", action="store_true", help="Log debug details."
    )
    verbosity.add_argument(
        "--quiet", action="store_true", help="Only log warnings and suppress summaries."
    )
    parser.add_argument(
        "paths",
        nargs="*",
        type=Path,
        help="Inputs: capture directory (extract), dataset CSV (baseline, fedsim) "
        "or report files (report).",
    )
    return parser


def apply_cli_overrides(
    config: SpecsenseConfig, args: argparse.Namespace
) -> SpecsenseConfig:
    overrides: dict[str, object] = {}

    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.workers is not None:
        overrides["workers"] = args.workers
    if args.out is not None:
        overrides["output_dir"] = args.out
    if args.full_scale:
        overrides["full_scale"] = True

    if overrides:
        config = config.with_overrides(**overrides)
    return config


def configure_logging(args: argparse.Namespace) -> None:
    level = logging.INFO
    if args.verbose:
        level = logging.DEBUG
    elif args.quiet:
        level = logging.WARNING
    logging.basicConfig(
        level=level,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
        force=True,
    )


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    configure_logging(args)

    command = Command(args.command)
    if command in (Command.EXTRACT, Command.BASELINE, Command.FEDSIM) and len(args.paths) > 1:
        parser.error(f"{command.value} takes at most one input path")
    if command is Command.GENERATE and args.paths:
        parser.error("generate takes no input paths")

    try:
        config = load_config(root=args.root, config_path=args.config)
        config = apply_cli_overrides(config, args)
        runner = SpecsenseRunner(config, quiet=args.quiet)
        runner.run(command, args.paths)
    except SpecsenseError as exc:
        print(f"specsense: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"specsense: {exc}", file=sys.stderr)
        return OS_ERROR_EXIT_CODE
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
