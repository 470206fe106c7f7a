"""Command line interface: simulate, verify, project, oracle."""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys

from .config import SUITES, SuiteConfig, load_config
from .errors import ConfigError, MPPError
from .report import fmt

log = logging.getLogger("mppchaos")


def _overrides(args) -> dict:
    over: dict = {}
    if getattr(args, "seed", None) is not None:
        over.setdefault("sim", {})["seed"] = args.seed
    if getattr(args, "paths", None) is not None:
        over.setdefault("sim", {})["paths"] = args.paths
    if getattr(args, "workers", None) is not None:
        over.setdefault("sim", {})["workers"] = args.workers
    if getattr(args, "mode", None) is not None:
        over["mode"] = {"rescale": args.mode}
    if getattr(args, "suite", None):
        over["suites"] = list(args.suite)
    return over


def _load(args) -> SuiteConfig:
    return load_config(args.config, _overrides(args))


def cmd_simulate(args) -> int:
    from .path import sample_paths, write_paths_csv

    cfg = _load(args)
    paths = sample_paths(cfg.model, cfg.seed, cfg.paths, workers=cfg.workers, chunk=cfg.chunk)
    out = args.out or cfg.output.get("paths_csv") or "paths.csv"
    with open(out, "w", encoding="utf-8", newline="") as fh:
        write_paths_csv(fh, cfg.model, paths)
    log.info("wrote %d paths to %s", len(paths), out)
    return 0


def cmd_verify(args) -> int:
    from .suites import run

    cfg = _load(args)
    report = run(cfg)
    out = args.out or "."
    os.makedirs(out, exist_ok=True)
    csv_path = os.path.join(out, os.path.basename(cfg.output["report_csv"]))
    json_path = os.path.join(out, os.path.basename(cfg.output["report_json"]))
    report.write(csv_path, json_path)
    for row in report.rows:
        print(f"{row.status:4s}  {row.test:14s} {row.statistic}  est={fmt(row.estimate)} target={fmt(row.target)}")
    if not report.ok:
        print(f"{len(report.failures)} failing row(s):", file=sys.stderr)
        for row in report.failures:
            print(f"  {row.test}: {row.statistic}", file=sys.stderr)
        return 1
    return 0


def cmd_project(args) -> int:
    from . import functionals as lib
    from .chaos import completeness_report

    cfg = _load(args)
    funs = [lib.by_name(n, cfg.model) for n in cfg.functionals]
    rows = completeness_report(
        cfg.model, cfg.zeta, funs, cfg.max_order, cfg.paths, seed=cfg.seed, time_degree=cfg.time_degree,
        q=cfg.quad_nodes, mode=cfg.mode, ridge=cfg.ridge, threshold=cfg.threshold, workers=cfg.workers,
        oracle_cfg=cfg.oracle,
    )
    fh = open(args.out, "w", encoding="utf-8", newline="") if args.out else sys.stdout
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["functional", "order", "residual_fraction", "std_error", "oracle_value", "pass"])
        for r in rows:
            w.writerow([r.functional, r.order, fmt(r.residual_fraction), fmt(r.std_error), fmt(r.oracle_value),
                        "pass" if r.passed else "fail"])
    finally:
        if fh is not sys.stdout:
            fh.close()
    return 0 if all(r.passed for r in rows) else 1


def cmd_oracle(args) -> int:
    from . import functionals as lib
    from .oracle import oracle_expectation

    cfg = _load(args)
    names = args.functional or cfg.functionals
    fh = open(args.out, "w", encoding="utf-8", newline="") if args.out else sys.stdout
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["functional", "value", "bound"])
        for name in names:
            value, bound = oracle_expectation(cfg.model, lib.by_name(name, cfg.model), cfg.oracle)
            w.writerow([name, fmt(value), fmt(bound)])
    finally:
        if fh is not sys.stdout:
            fh.close()
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mppchaos", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, paths=True):
        p.add_argument("--config", required=True, help="YAML run configuration")
        p.add_argument("--seed", type=int, help="override sim.seed")
        if paths:
            p.add_argument("--paths", type=int, help="override sim.paths")
            p.add_argument("--workers", type=int, help="override sim.workers")
        p.add_argument("--mode", choices=["sqrt_psi", "psi", "none"], help="override mode.rescale")
        p.add_argument("--out", help="output file (directory for verify)")

    p = sub.add_parser("simulate", help="write simulated paths as CSV")
    common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("verify", help="run verification suites and write the report")
    common(p)
    p.add_argument("--suite", action="append", choices=SUITES, help="run only this suite (repeatable)")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("project", help="chaos residual table for the configured functionals")
    common(p)
    p.set_defaults(func=cmd_project)

    p = sub.add_parser("oracle", help="exact expectations of functionals")
    common(p, paths=False)
    p.add_argument("--functional", action="append", help="functional name (repeatable)")
    p.set_defaults(func=cmd_oracle)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except MPPError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
