"""Command line entry point.

Exit codes: 0 success, 2 invalid configuration or network, 3 a safety
invariant failed during simulation.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .config import MODES, ConfigError, ExperimentConfig, load_config
from .kernel import synthesize
from .model import StructuralError, validate
from .simengine import InvariantViolation

EXIT_OK, EXIT_INVALID, EXIT_INVARIANT = 0, 2, 3


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rsn-hgi", description="Threshold-policy experiments for "
                                "resource-sharing networks in heavy traffic.")
    p.add_argument("--config", type=Path, help="YAML experiment file (defaults apply when omitted)")
    p.add_argument("--mode", choices=MODES)
    p.add_argument("--seed", type=int)
    p.add_argument("--jobs", type=int, help="worker processes")
    p.add_argument("--out", help="output directory")
    p.add_argument("--no-plots", action="store_true")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _validate_mode(cfg: ExperimentConfig) -> int:
    spec = cfg.network_spec()
    report = validate(spec)
    print(report.render())
    if not report.ok:
        return EXIT_INVALID
    tables = synthesize(spec)
    b = tables.basis
    fmt = lambda v: np.array2string(np.asarray(v), precision=6)  # noqa: E731
    print(f"theta = {fmt(spec.theta)}")
    print(f"lambda = {b.lam:.12g}" + ("  (trivial: every kernel direction is cost neutral)" if b.trivial else ""))
    if tables.M_set:
        print("M = {" + ", ".join("(" + ",".join(map(str, z)) + ")" for z in sorted(tables.M_set)) + "}")
    else:
        print("M = {} (empty)")
    if tables.lambda_tilde is not None:
        print(f"lambda_tilde = {tables.lambda_tilde:.12g}")
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config) if args.config else ExperimentConfig()
        cfg = cfg.with_(mode=args.mode, seed=args.seed, jobs=args.jobs, out=args.out)
        if cfg.mode == "validate":
            return _validate_mode(cfg)
        from .experiment import run_experiment
        table, extra = run_experiment(cfg)
    except (ConfigError, StructuralError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except InvariantViolation as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID

    if table.hgi:
        print(f"HGI ({table.hgi['kind']}) = {table.hgi['value']:.6g} +- {table.hgi['std_error']:.2g}")
    for a in table.aggregates():
        print(f"r={a['r']:g} {a['metric']}: {a['mean']:.6g} +- {a['std_error']:.2g} (n={a['n']})")
    trend = extra.get("trend")
    if trend:
        print("trend:", json.dumps(trend, default=float))
    if not args.no_plots:
        from .plots import emit_plots
        emit_plots(table, cfg.out)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
