"""Command-line entry point.

Usage::

    lossmesh <mode> --config experiment.json [--out DIR] [--seed N] [--threads N]
    lossmesh verify [--tests DIR] [-k EXPR]

Modes map one-to-one to config modes (fixedpoint, ode_exp, ode_phase,
ode_hetero, simulate, insensitivity, transient); ``verify`` runs the
acceptance test suite end-to-end via pytest.

Exit codes: 0 success, 1 config error, 2 engine error, 3 verification failure.
"""

from __future__ import annotations

import argparse
import subprocess
import sys
from dataclasses import replace
from pathlib import Path

from .config import MODES, load_config
from .errors import ConfigError
from .runner import run_experiment, write_results

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_ENGINE = 2
EXIT_VERIFY = 3


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lossmesh",
        description="Power-of-d loss clusters: simulation, mean-field ODEs, "
                    "and stationary-law cross-checks.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for mode in MODES:
        p = sub.add_parser(mode, help=f"run a '{mode}' experiment from a config file")
        p.add_argument("--config", required=True, help="path to the JSON config")
        p.add_argument("--out", default=None, help="output directory (overrides config)")
        p.add_argument("--seed", type=int, default=None, help="seed override")
        p.add_argument("--threads", type=int, default=1,
                       help="worker processes for replicated runs")
    v = sub.add_parser("verify", help="run the acceptance suite end-to-end")
    v.add_argument("--tests", default=None,
                   help="tests directory (default: ./tests next to the current directory)")
    v.add_argument("-k", default=None, help="pytest -k filter")
    return parser


def _run_mode(args) -> int:
    config = load_config(args.config)
    if config.mode != args.command:
        raise ConfigError(
            f"config declares mode {config.mode!r} but subcommand is {args.command!r}"
        )
    if args.seed is not None:
        config = replace(config, seed=args.seed)
        config.raw["run"]["seed"] = args.seed
    tables = run_experiment(config, threads=args.threads)
    paths = write_results(config, tables, out_dir=args.out)
    for path in paths:
        print(f"wrote {path}")
    for name, table in tables.items():
        verdict = table.metadata.get("aggregate")
        if verdict:
            print(f"{name}: {verdict}")
            if verdict != "pass":
                return EXIT_VERIFY
    return EXIT_OK


def _run_verify(args) -> int:
    tests_dir = Path(args.tests) if args.tests else Path.cwd() / "tests"
    target = tests_dir / "test_acceptance.py"
    if not target.exists():
        print(f"acceptance suite not found at {target}", file=sys.stderr)
        return EXIT_CONFIG
    cmd = [sys.executable, "-m", "pytest", str(target), "-v"]
    if args.k:
        cmd += ["-k", args.k]
    result = subprocess.run(cmd)
    return EXIT_OK if result.returncode == 0 else EXIT_VERIFY


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "verify":
            return _run_verify(args)
        return _run_mode(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # engine failure
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ENGINE


if __name__ == "__main__":
    sys.exit(main())
