"""Command line interface: parse a config, run its stages and export the results."""

from __future__ import annotations

import argparse
from dataclasses import replace

from loguru import logger

from dtmanifold._io import export_results, parse_config
from dtmanifold.tl import STAGES, run_pipeline, with_dependencies
from dtmanifold.utils import setup_logging

COMMAND_STAGES = {
    "validate": ("validate",),
    "eig": ("spectral", "riccati"),
    "solve": ("manifold",),
    "check": ("dpe",),
    "oracle": ("oracle",),
}

EXIT_INPUT_ERROR = 2


def _stage_list(text: str) -> tuple[str, ...]:
    return tuple(s.strip() for s in text.split(",") if s.strip())


def build_parser() -> argparse.ArgumentParser:
    """Argument parser with one subcommand per stage plus `run` for the config's own stages."""
    parser = argparse.ArgumentParser(
        prog="dtmanifold",
        description="Stable manifold solver for discrete-time optimal control.",
    )
    commands = parser.add_subparsers(dest="command", required=True)
    helps = {
        "validate": "check the standing assumptions of the problem",
        "eig": "pencil spectrum, reciprocity and the stable subspace graph",
        "solve": "compute the local stable manifold",
        "check": "optimal cost and feedback with their dynamic programming residuals",
        "oracle": "value-iteration reference cost",
        "run": "run the stages listed in the config",
    }
    for name, text in helps.items():
        sub = commands.add_parser(name, help=text, description=text)
        sub.add_argument("config", help="path to the JSON config")
        sub.add_argument("--out", default=None, help="output directory (default: config `outputs`)")
        sub.add_argument("--threads", type=int, default=None, help="worker processes; 1 is deterministic")
        sub.add_argument(
            "--stages",
            type=_stage_list,
            default=None,
            help=f"comma separated stages out of {','.join(STAGES)}; an empty string runs none",
        )
        sub.add_argument("--log-level", default="INFO", help="loguru level, e.g. DEBUG or WARNING")
        sub.add_argument("--log-file", default=None, help="additional log file")
    return parser


def main(argv: list[str] | None = None) -> int:
    """
    Entry point of the `dtmanifold` command.

    Returns
    -------
    Exit code: 0 if every check passed, 1 if a check failed, 2 if the input
    could not be read or the output not written, 3 if a stage raised.
    """
    args = build_parser().parse_args(argv)
    setup_logging(log_level=args.log_level, log_file=args.log_file)

    try:
        cfg = parse_config(args.config)
        if args.stages is not None:
            stages = with_dependencies(args.stages)
        elif args.command == "run":
            stages = cfg.stages
        else:
            stages = with_dependencies(COMMAND_STAGES[args.command])
        changes = {"stages": stages}
        if args.out is not None:
            changes["outputs"] = args.out
        if args.threads is not None:
            changes["threads"] = args.threads
        cfg = replace(cfg, **changes)
    except (ValueError, FileNotFoundError) as e:
        logger.error(f"Cannot read config: {e}")
        return EXIT_INPUT_ERROR

    report = run_pipeline(cfg)
    try:
        export_results(report, cfg.outputs)
    except OSError as e:
        logger.error(f"Cannot write results to {cfg.outputs}: {e}")
        return EXIT_INPUT_ERROR
    failed = [c for c in report.checks if not c.passed]
    logger.info(
        f"{len(report.checks) - len(failed)} of {len(report.checks)} checks passed; "
        f"exit code {report.exit_code}."
    )
    return report.exit_code
