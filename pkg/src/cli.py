# File: src/cli.py

"""Command-line entry point: simulate, check-gains, verify-surface and selftest"""

import argparse
from pathlib import Path
from typing import List, Optional

from config.settings import set_config, setup_environment

from .models import AuditStatus, ConfigError, ControllerKind, RunStatus
from .pipeline import ScenarioPipeline
from .selftest import SUITES, run_selftest

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_CONFIG_ERROR = 2
EXIT_SAFETY_VIOLATION = 3
EXIT_NUMERICAL_ABORT = 4


def _parse_args(argv: Optional[List[str]] = None) -> argparse.Namespace:
    parser = argparse.ArgumentParser(
        prog="delayguard",
        description="Safe distributed control of delay-coupled robots.",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    simulate = commands.add_parser("simulate", help="run a scenario and write its artifacts")
    simulate.add_argument("config", nargs="?", type=Path, help="TOML configuration (bundled default if omitted)")
    simulate.add_argument("--controller", choices=[k.value for k in ControllerKind],
                          help="override the configured controller")
    simulate.add_argument("--out", dest="out_dir", type=Path, default=Path("output"))
    simulate.add_argument("--threads", type=int, help="worker threads (overrides DELAYGUARD_THREADS)")

    check = commands.add_parser("check-gains", help="print the small-gain certificate")
    check.add_argument("config", nargs="?", type=Path)

    verify = commands.add_parser("verify-surface", help="audit the sliding-surface conditions")
    verify.add_argument("config", nargs="?", type=Path)
    verify.add_argument("--seed", type=int, default=0)

    selftest = commands.add_parser("selftest", help="run the oracle suites")
    selftest.add_argument("--suite", dest="suites", action="append", choices=list(SUITES))
    selftest.add_argument("--quick", action="store_true", help="reduced sample counts")
    return parser.parse_args(argv)


def _pipeline(config_path: Optional[Path], threads: Optional[int] = None) -> ScenarioPipeline:
    config = setup_environment(config_path, threads=threads)
    set_config(config)
    return ScenarioPipeline()


def _simulate(args: argparse.Namespace) -> int:
    pipeline = _pipeline(args.config, args.threads)
    telemetry, report = pipeline.run_simulation(args.controller)
    pipeline.save_results(telemetry, report, args.out_dir)
    if report.violation or report.conflicts or report.status is RunStatus.SAFETY_VIOLATION:
        return EXIT_SAFETY_VIOLATION
    if report.status is RunStatus.NUMERICAL_ABORT:
        return EXIT_NUMERICAL_ABORT
    return EXIT_OK


def _check_gains(args: argparse.Namespace) -> int:
    certificate = _pipeline(args.config).check_gains()
    return EXIT_OK if certificate.passed else EXIT_FAILED


def _verify_surface(args: argparse.Namespace) -> int:
    audit = _pipeline(args.config).verify_surface(seed=args.seed)
    if audit.status is AuditStatus.INCONCLUSIVE:
        print("⚠️ Some conditions could not be decided from the samples")
    return EXIT_FAILED if audit.status is AuditStatus.FAIL else EXIT_OK


def _selftest(args: argparse.Namespace) -> int:
    results = run_selftest(args.suites, quick=args.quick)
    return EXIT_OK if all(r.passed for r in results) else EXIT_FAILED


COMMANDS = {
    "simulate": _simulate,
    "check-gains": _check_gains,
    "verify-surface": _verify_surface,
    "selftest": _selftest,
}


def main(argv: Optional[List[str]] = None) -> int:
    args = _parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as e:
        print(f"❌ Configuration error: {e}")
        return EXIT_CONFIG_ERROR


if __name__ == "__main__":
    raise SystemExit(main())
