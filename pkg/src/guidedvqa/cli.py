"""Command-line entry point for the experiment harness.

Usage: ``guidedvqa <experiment> [--config PATH] [--seed N] [--out DIR]
[--override KEY=VAL ...]`` or ``guidedvqa validate CONFIG``.

Exit codes: 0 success, 2 config error, 3 capacity error, 4 numerical
failure.
"""
from __future__ import annotations

import argparse
import sys

from .experiments import (
    EXPERIMENTS,
    CapacityError,
    ConfigError,
    NumericalError,
    apply_overrides,
    build_config,
    load_config_file,
    run,
    validate_report,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_CAPACITY = 3
EXIT_NUMERICAL = 4


def _add_common_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON config file")
    parser.add_argument("--seed", type=int, help="64-bit experiment seed")
    parser.add_argument("--out", help="output directory")
    parser.add_argument(
        "--override",
        action="append",
        metavar="KEY=VAL",
        help="override a config field (VAL parsed as JSON, else string)",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="guidedvqa",
        description="Guided-state variational training experiments with "
        "tangent-kernel diagnostics",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in EXPERIMENTS:
        p = sub.add_parser(name, help=f"run the {name} experiment")
        _add_common_flags(p)
        if name == "gen-data":
            p.add_argument(
                "--no-amplitudes",
                action="store_true",
                help="omit guiding-state amplitudes from the dataset JSON; "
                "they regenerate from (seed, couplings) on load",
            )
    v = sub.add_parser("validate", help="validate a config without computing")
    v.add_argument("config_path", help="JSON config file to validate")
    v.add_argument("--override", action="append", metavar="KEY=VAL")
    return parser


def _gather_config(args) -> dict:
    doc = load_config_file(args.config) if args.config else {}
    doc = apply_overrides(doc, args.override)
    doc.setdefault("experiment", args.command)
    if doc["experiment"] != args.command:
        raise ConfigError(
            f"config declares experiment {doc['experiment']!r} but the "
            f"{args.command!r} subcommand was invoked"
        )
    if args.seed is not None:
        doc["seed"] = args.seed
    if args.out is not None:
        doc["out"] = args.out
    if getattr(args, "no_amplitudes", False):
        doc["include_amplitudes"] = False
    return doc


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "validate":
            doc = load_config_file(args.config_path)
            doc = apply_overrides(doc, args.override)
            cfg = build_config(doc)
            for line in validate_report(cfg):
                print(line)
            return EXIT_OK
        cfg = build_config(_gather_config(args))
        result = run(cfg)
        for name in result.files:
            print(f"wrote {result.outdir / name}")
        print(f"wrote {result.outdir / 'manifest.json'}")
        return EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CapacityError as exc:
        print(f"capacity error: {exc}", file=sys.stderr)
        return EXIT_CAPACITY
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    raise SystemExit(main())
