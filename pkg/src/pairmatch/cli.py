"""Command-line entry point: simulate, sweep, estimate-s, baseline, check."""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace

import numpy as np

from .errors import (
    ConfigError,
    FeasibilityError,
    InsufficientDataError,
    InvariantViolation,
    NoDetectionError,
    PairMatchError,
)
from .harness import CSV_HEADER, CapRule, ExperimentConfig, csv_rows, emit_csv, fit_exponent, run_experiment
from .model import Budget, ModelParams
from .oracle import QueryLedger, sample_csbm, verify_ledger
from .strategies import (
    AlgoConstants,
    PathwiseCap,
    estimate_s,
    run_constrained,
    run_doubling,
    run_random,
    run_unconstrained,
)

EXIT_OK, EXIT_CONFIG, EXIT_FEASIBILITY, EXIT_INVARIANT = 0, 2, 3, 4


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="experiment config file (INI)")
    p.add_argument("--seed", type=int, help="base seed (overrides the config)")
    p.add_argument("--jobs", type=int, help="worker processes for replications")
    p.add_argument("--out", help="CSV output path")
    p.add_argument("--dump-ledger", metavar="PATH", help="write the first replication's query log as CSV")
    p.add_argument("--constants", choices=("paper", "practical"), help="algorithm constants")
    p.add_argument("--strategy", choices=("random", "unconstrained", "constrained", "doubling"))
    g = p.add_argument_group("inline instance (used when --config is absent)")
    g.add_argument("--n", type=int, default=2000)
    g.add_argument("--p", type=float, default=0.4)
    g.add_argument("--q", type=float, default=0.1)
    g.add_argument("--T", dest="grid", type=int, nargs="+", default=[10000])
    g.add_argument("--B-T", dest="cap_rule", default="unbounded", help="unbounded | N | power:g | pathwise:g,tau")
    g.add_argument("--reps", type=int, default=10)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pairmatch", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_ in (
        ("simulate", "run one grid cell (the first T)"),
        ("sweep", "run the whole grid and fit the log-log slope"),
        ("baseline", "uniform-random reference over the grid"),
    ):
        p = sub.add_parser(name, help=help_)
        _common(p)
        if name == "sweep":
            p.add_argument("--t-min-cut", type=int, default=0, help="fit only grid points with T above this")
    p = sub.add_parser("estimate-s", help="run the s-estimation heuristic on a fresh instance")
    _common(p)
    p.add_argument("--max-nodes", type=int, default=None)
    p = sub.add_parser("check", help="invariant suite on a tiny instance")
    p.add_argument("--seed", type=int, default=0)
    return parser


def load_config(args: argparse.Namespace) -> ExperimentConfig:
    if args.config:
        cfg = ExperimentConfig.load(args.config)
    else:
        try:
            params = ModelParams(args.n, args.p, args.q)
        except PairMatchError as exc:
            raise ConfigError(str(exc)) from None
        cfg = ExperimentConfig(
            params=params,
            strategy=args.strategy or "random",
            grid=tuple(args.grid),
            cap_rule=CapRule.parse(args.cap_rule),
            replications=args.reps,
        )
    strategy = args.strategy or cfg.strategy
    constants = cfg.constants
    if args.constants:
        constants = AlgoConstants.named(args.constants, constrained=strategy == "constrained")
    cap_rule = cfg.cap_rule
    if strategy == "random" and cap_rule.kind == "pathwise":
        cap_rule = CapRule()
    try:
        cfg = replace(cfg, strategy=strategy, constants=constants, cap_rule=cap_rule)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    return cfg.with_overrides(
        seed=args.seed, jobs=args.jobs, csv_path=args.out, dump_ledger=args.dump_ledger
    )


def _report(result, stream=None) -> None:
    stream = stream or sys.stdout
    stream.write(",".join(CSV_HEADER) + "\n")
    for row in csv_rows(result):
        stream.write(",".join(row) + "\n")


def cmd_run(args: argparse.Namespace, *, grid_cut: bool, strategy: str | None = None) -> int:
    cfg = load_config(args)
    if strategy:
        cap_rule = cfg.cap_rule if cfg.cap_rule.kind in ("unbounded", "fixed", "power") else CapRule()
        cfg = replace(cfg, strategy=strategy, cap_rule=cap_rule)
    if grid_cut:
        cfg = replace(cfg, grid=cfg.grid[:1])
    result = run_experiment(cfg)
    if cfg.csv_path:
        emit_csv(result, cfg.csv_path)
    _report(result)
    if args.command == "sweep":
        try:
            slope, stderr = fit_exponent(result, args.t_min_cut)
            print(f"slope {slope!r} stderr {stderr!r}")
        except InsufficientDataError as exc:
            print(f"slope unavailable: {exc}")
    return EXIT_OK


def cmd_estimate(args: argparse.Namespace) -> int:
    cfg = load_config(args)
    graph = sample_csbm(cfg.params, cfg.seed)
    try:
        est = estimate_s(graph, None, args.max_nodes, cfg.seed)
    except NoDetectionError as exc:
        print(f"no detection after {exc.queries_used} queries: {exc}")
        return EXIT_FEASIBILITY
    print(f"s_hat {est.s_hat!r} queries_used {est.queries_used} k_hat {est.k_hat} s_true {cfg.params.s!r}")
    return EXIT_OK


def cmd_check(args: argparse.Namespace) -> int:
    """Run every strategy on a small instance and re-verify each ledger."""
    params = ModelParams(2000, 0.4, 0.1)
    s = params.s
    c = AlgoConstants.practical()
    runs = {
        "random": lambda g: run_random(g, Budget(3000, 8), args.seed),
        "unconstrained": lambda g: run_unconstrained(g, s, 5000, c, args.seed),
        "constrained": lambda g: run_constrained(g, s, 5000, 60, c, args.seed, truncate_supply=True),
        "doubling": lambda g: run_doubling(g, s, 5000, "unconstrained", c, args.seed),
        "doubling-pathwise": lambda g: run_doubling(g, s, 2000, PathwiseCap(0.5), c, args.seed, truncate_supply=True),
    }
    failed = 0
    for name, fn in runs.items():
        graph = sample_csbm(params, args.seed)
        out = fn(graph)
        try:
            verify_ledger(out.ledger)
            status = "ok"
        except InvariantViolation as exc:
            status, failed = f"FAIL {exc}", failed + 1
        print(f"{name:18s} t={out.ledger.t:6d} n_bad={out.ledger.n_bad:6d} max_N_a={out.ledger.max_count():5d} {status}")
    # estimate-s through its own ledger
    ledger = QueryLedger(sample_csbm(params, args.seed), Budget(20000))
    try:
        est = estimate_s(ledger._graph, ledger, 1024, args.seed)
        verify_ledger(ledger)
        print(f"{'estimate-s':18s} t={ledger.t:6d} s_hat={est.s_hat:.4f} ok")
    except NoDetectionError as exc:
        print(f"{'estimate-s':18s} no detection after {exc.queries_used} queries")
    if failed:
        raise InvariantViolation(f"{failed} ledger(s) failed verification")
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    np.seterr(all="ignore")
    try:
        if args.command == "simulate":
            return cmd_run(args, grid_cut=True)
        if args.command == "sweep":
            return cmd_run(args, grid_cut=False)
        if args.command == "baseline":
            return cmd_run(args, grid_cut=False, strategy="random")
        if args.command == "estimate-s":
            return cmd_estimate(args)
        return cmd_check(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FeasibilityError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_FEASIBILITY
    except InvariantViolation as exc:
        print(f"invariant violated: {exc}", file=sys.stderr)
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())
