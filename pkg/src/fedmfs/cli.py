"""Command-line front end.

Exit codes: 0 success, 2 invalid config or spec, 3 failure while running.
Set FEDMFS_LOG (DEBUG, INFO, WARNING, ...) to change log verbosity.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from .axioms import off_by_one_weight, run_axiom_suite
from .attribution import shapley_weight
from .datagen import InvalidSpec, gen_data, load_spec
from .domain import ConfigError, DomainError, load_config, validate_config
from .federation import run_experiment
from .reporting import write_run
from .sweep import load_sweep, run_sweep

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3

log = logging.getLogger("fedmfs")


class _ConfigProblem(Exception):
    pass


def _setup_logging() -> None:
    level = os.environ.get("FEDMFS_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")


def _read(loader, path):
    try:
        return loader(path)
    except (OSError, json.JSONDecodeError, KeyError, TypeError, ConfigError, InvalidSpec) as exc:
        raise _ConfigProblem(f"{path}: {exc}") from exc


def cmd_gen_data(args) -> int:
    spec = _read(load_spec, args.spec)
    try:
        manifest = gen_data(spec, args.out)
    except InvalidSpec as exc:
        raise _ConfigProblem(str(exc)) from exc
    print(f"wrote {len(manifest.clients)} clients, {len(manifest.modalities)} modalities to {args.out}")
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = _read(load_config, args.config)
    try:
        validate_config(cfg)
    except ConfigError as exc:
        raise _ConfigProblem(str(exc)) from exc
    result = run_experiment(cfg, workers=args.workers)
    write_run(result, args.out)
    last = result.metrics[-1]
    print(f"{cfg.strategy.value}: {len(result.metrics)} rounds, final mean accuracy {last.mean_accuracy:.4f}, "
          f"uplink {last.cumulative_uploaded_bytes} bytes")
    return EXIT_OK


def cmd_sweep(args) -> int:
    spec = _read(load_sweep, args.spec)
    try:
        validate_config(spec.base)
    except ConfigError as exc:
        raise _ConfigProblem(str(exc)) from exc
    rows = run_sweep(spec, args.out, workers=args.workers)
    failed = sum(r["status"] != "ok" for r in rows)
    print(f"{len(rows)} cells, {failed} failed; summary in {os.path.join(args.out, 'summary.csv')}")
    return EXIT_OK


def cmd_shapley_check(args) -> int:
    weight = off_by_one_weight if args.broken_weight else shapley_weight
    checks = run_axiom_suite(weight)
    for c in checks:
        print(f"{'PASS' if c.passed else 'FAIL'} {c.name}: {c.detail}")
    return EXIT_OK if all(c.passed for c in checks) else EXIT_RUNTIME


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fedmfs", description="Multimodal federated learning with selective model uploads.")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a synthetic federation from a spec file")
    g.add_argument("spec")
    g.add_argument("out")
    g.set_defaults(func=cmd_gen_data)

    r = sub.add_parser("run", help="run one experiment")
    r.add_argument("config")
    r.add_argument("out")
    r.add_argument("--workers", type=int, default=1, help="client threads per round")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", help="run a grid of experiments")
    s.add_argument("spec")
    s.add_argument("out")
    s.add_argument("--workers", type=int, default=1, help="experiments run in parallel processes")
    s.set_defaults(func=cmd_sweep)

    c = sub.add_parser("shapley-check", help="verify the Shapley axioms on built-in games")
    c.add_argument("--broken-weight", action="store_true", help=argparse.SUPPRESS)
    c.set_defaults(func=cmd_shapley_check)
    return p


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    if getattr(args, "workers", 1) < 1:
        print("error: --workers must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except _ConfigProblem as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DomainError, ArithmeticError, OSError, RuntimeError) as exc:
        log.debug("run failed", exc_info=True)
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
