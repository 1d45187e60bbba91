"""Experiment configuration, Monte Carlo replication, aggregation, exponent fits and CSV output.

Per-replication seeds are ``derive_seed(base_seed, "replication", t_index, rep)``;
the hidden graph of a replication is drawn with that seed and the strategy
runs with ``derive_seed(rep_seed, "strategy")``.
"""

from __future__ import annotations

import configparser
import csv
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import stats

from .errors import ConfigError, InsufficientDataError, InvalidParamsError
from .model import Budget, CurveKind, ModelParams, regret_lower_bound, snap_ceil
from .oracle import dump_ledger_csv, sample_csbm, verify_ledger
from .rng import derive_seed
from .strategies import (
    AlgoConstants,
    PathwiseCap,
    constrained_schedule,
    run_constrained,
    run_doubling,
    run_random,
    run_unconstrained,
    unconstrained_sizes,
)
from .strategies.constrained import DELEGATION_FACTOR
from .strategies.unconstrained import small_signal

STRATEGIES = ("random", "unconstrained", "constrained", "doubling")
CSV_HEADER = (
    "T,B_T,strategy,reps,mean_nbad,std_nbad,q10_nbad,q90_nbad,mean_discoveries,"
    "lb_theorem,lb_strong_kl,s,n,p,q,seed"
).split(",")


# -- budget rules ----------------------------------------------------------------


@dataclass(frozen=True)
class CapRule:
    """How B_T follows T: unbounded, fixed, ceil(T^gamma), or pathwise t^gamma / (log t)^tau."""

    kind: str = "unbounded"
    value: float = 0.0
    tau: float = 0.0

    def __post_init__(self) -> None:
        if self.kind not in ("unbounded", "fixed", "power", "pathwise"):
            raise ConfigError(f"unknown B_T rule {self.kind!r}")
        if self.kind == "fixed" and (self.value < 1 or self.value != int(self.value)):
            raise ConfigError(f"fixed B_T must be a positive integer, got {self.value}")
        if self.kind in ("power", "pathwise") and not 0 < self.value <= 1:
            raise ConfigError(f"B_T exponent must lie in (0, 1], got {self.value}")

    @classmethod
    def parse(cls, text: str) -> CapRule:
        text = text.strip()
        if text in ("unbounded", "inf", ""):
            return cls()
        kind, _, arg = text.partition(":")
        try:
            if not arg:
                return cls("fixed", float(int(kind)))
            if kind == "fixed":
                return cls("fixed", float(int(arg)))
            if kind == "power":
                return cls("power", float(arg))
            if kind == "pathwise":
                gamma, _, tau = arg.partition(",")
                return cls("pathwise", float(gamma), float(tau or 0.0))
        except ValueError as exc:
            raise ConfigError(f"malformed B_T rule {text!r}: {exc}") from None
        raise ConfigError(f"malformed B_T rule {text!r}")

    def format(self) -> str:
        if self.kind == "unbounded":
            return "unbounded"
        if self.kind == "fixed":
            return f"fixed:{int(self.value)}"
        if self.kind == "power":
            return f"power:{self.value!r}"
        return f"pathwise:{self.value!r},{self.tau!r}"

    def cap(self, T: int) -> int | None:
        """The terminal cap B_T used for bounds and the fixed-horizon strategies."""
        if self.kind == "unbounded":
            return None
        if self.kind == "fixed":
            return int(self.value)
        if self.kind == "power":
            return max(1, snap_ceil(T**self.value))
        return int(PathwiseCap(self.value, self.tau)(max(T, 1)))


# -- configuration ---------------------------------------------------------------

_SCHEMA = {
    "model": {"n", "p", "q", "s", "alpha"},
    "strategy": {"name", "constants", "c_O0", "C_k", "C_I", "s_input", "truncate_supply"},
    "budget": {"T", "B_T"},
    "run": {"replications", "seed", "rho_star", "jobs"},
    "output": {"csv", "dump_ledger", "record_trajectory"},
}


@dataclass(frozen=True)
class ExperimentConfig:
    params: ModelParams
    strategy: str = "random"
    constants: AlgoConstants = field(default_factory=AlgoConstants.practical)
    grid: tuple[int, ...] = ()
    cap_rule: CapRule = field(default_factory=CapRule)
    replications: int = 1
    seed: int = 0
    s_input: float | None = None
    rho_star: float | None = None
    truncate_supply: bool = False
    jobs: int = 1
    csv_path: str | None = None
    dump_ledger: str | None = None
    record_trajectory: bool = False

    def __post_init__(self) -> None:
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"unknown strategy {self.strategy!r}; choose from {', '.join(STRATEGIES)}")
        if self.replications < 1:
            raise ConfigError("replications must be >= 1")
        if any(T < 0 for T in self.grid):
            raise ConfigError("grid values must be >= 0")
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")
        if self.cap_rule.kind == "pathwise" and self.strategy != "doubling":
            raise ConfigError("a pathwise B_T rule requires the doubling strategy")
        if self.strategy == "doubling" and self.cap_rule.kind not in ("unbounded", "pathwise"):
            raise ConfigError("the doubling strategy takes B_T = unbounded or pathwise:gamma,tau")
        if self.cap_rule.kind == "pathwise":
            try:
                PathwiseCap(self.cap_rule.value, self.cap_rule.tau)
            except InvalidParamsError as exc:
                raise ConfigError(str(exc)) from None
        if self.strategy == "constrained" and self.cap_rule.kind == "unbounded":
            raise ConfigError("the constrained strategy needs a finite B_T rule")

    @property
    def s_used(self) -> float:
        return self.params.s if self.s_input is None else self.s_input

    # -- (de)serialization -------------------------------------------------------
    @classmethod
    def parse(cls, text: str) -> ExperimentConfig:
        cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
        cp.optionxform = str
        try:
            cp.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(f"malformed config: {exc}") from None
        for section in cp.sections():
            if section not in _SCHEMA:
                raise ConfigError(f"unknown section [{section}]")
            unknown = set(cp[section]) - _SCHEMA[section]
            if unknown:
                raise ConfigError(f"unknown key(s) in [{section}]: {', '.join(sorted(unknown))}")

        def get(section, key, conv=str, default=None):
            if not cp.has_option(section, key):
                return default
            raw = cp.get(section, key).strip()
            try:
                return conv(raw)
            except ValueError:
                raise ConfigError(f"[{section}] {key} = {raw!r} is not a valid {conv.__name__}") from None

        try:
            n = get("model", "n", int)
            if n is None:
                raise ConfigError("[model] n is required")
            p, q = get("model", "p", float), get("model", "q", float)
            s, alpha = get("model", "s", float), get("model", "alpha", float)
            if p is not None and q is not None and s is None and alpha is None:
                params = ModelParams(n, p, q)
            elif s is not None and alpha is not None and p is None and q is None:
                params = ModelParams.from_scaling(n, s, alpha)
            else:
                raise ConfigError("[model] needs either (p, q) or (s, alpha)")
            strategy = get("strategy", "name", str, "random")
            cname = get("strategy", "constants", str, "practical")
            if cname == "practical":
                constants = AlgoConstants.practical(
                    get("strategy", "c_O0", float, 2.0),
                    get("strategy", "C_k", float, 2.0),
                    get("strategy", "C_I", float, 4.0),
                )
            elif cname in ("paper", "paper-unconstrained", "paper-constrained"):
                if any(cp.has_option("strategy", k) for k in ("c_O0", "C_k", "C_I")):
                    raise ConfigError("paper constants are pinned and cannot be overridden")
                constants = AlgoConstants.named(cname, constrained=strategy == "constrained")
            else:
                raise ConfigError(f"unknown constants set {cname!r}")
            grid_raw = get("budget", "T", str, "")
            grid = tuple(int(float(x)) for x in grid_raw.replace(",", " ").split()) if grid_raw else ()
            return cls(
                params=params,
                strategy=strategy,
                constants=constants,
                grid=grid,
                cap_rule=CapRule.parse(get("budget", "B_T", str, "unbounded")),
                replications=get("run", "replications", int, 1),
                seed=get("run", "seed", int, 0),
                s_input=get("strategy", "s_input", float),
                rho_star=get("run", "rho_star", float),
                truncate_supply=get("strategy", "truncate_supply", _boolean, False),
                jobs=get("run", "jobs", int, 1),
                csv_path=get("output", "csv", str),
                dump_ledger=get("output", "dump_ledger", str),
                record_trajectory=get("output", "record_trajectory", _boolean, False),
            )
        except InvalidParamsError as exc:
            raise ConfigError(str(exc)) from None
        except ValueError as exc:
            raise ConfigError(f"malformed value: {exc}") from None

    @classmethod
    def load(cls, path: str | Path) -> ExperimentConfig:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        return cls.parse(text)

    def serialize(self) -> str:
        lines = ["[model]", f"n = {self.params.n}", f"p = {self.params.p!r}", f"q = {self.params.q!r}", ""]
        lines += ["[strategy]", f"name = {self.strategy}", f"constants = {_constants_name(self.constants)}"]
        if self.constants.mode.value == "practical":
            c = self.constants
            lines += [f"c_O0 = {c.c_O0!r}", f"C_k = {c.C_k!r}", f"C_I = {c.C_I!r}"]
        if self.s_input is not None:
            lines.append(f"s_input = {self.s_input!r}")
        lines += [f"truncate_supply = {str(self.truncate_supply).lower()}", ""]
        lines += ["[budget]", f"T = {', '.join(str(T) for T in self.grid)}", f"B_T = {self.cap_rule.format()}", ""]
        lines += ["[run]", f"replications = {self.replications}", f"seed = {self.seed}", f"jobs = {self.jobs}"]
        if self.rho_star is not None:
            lines.append(f"rho_star = {self.rho_star!r}")
        lines += ["", "[output]", f"record_trajectory = {str(self.record_trajectory).lower()}"]
        if self.csv_path is not None:
            lines.append(f"csv = {self.csv_path}")
        if self.dump_ledger is not None:
            lines.append(f"dump_ledger = {self.dump_ledger}")
        return "\n".join(lines) + "\n"

    def with_overrides(self, **kw) -> ExperimentConfig:
        kw = {k: v for k, v in kw.items() if v is not None}
        return replace(self, **kw) if kw else self


def _boolean(text: str) -> bool:
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _constants_name(c: AlgoConstants) -> str:
    return c.mode.value


# -- feasibility -----------------------------------------------------------------


def check_cell(config: ExperimentConfig, T: int) -> None:
    """Raise ConfigError naming the cell if (n, T, B_T) cannot be run."""
    params, s = config.params, config.s_used
    cap = config.cap_rule.cap(T)
    where = f"cell T={T}, B_T={'inf' if cap is None else cap}"
    try:
        Budget(T, cap).check(params)
    except InvalidParamsError as exc:
        raise ConfigError(f"{where}: {exc}") from None
    n = params.n
    if config.strategy == "random" and cap is not None and T > n * cap // 2:
        raise ConfigError(f"{where}: T exceeds n*B_T/2")
    unconstrained_like = config.strategy == "unconstrained" or (
        config.strategy == "constrained" and cap is not None and cap >= DELEGATION_FACTOR * math.sqrt(T)
    )
    if unconstrained_like and not small_signal(s, T):
        sz = unconstrained_sizes(s, T, config.constants)
        if sz["N"] + sz["A0"] > n:
            raise ConfigError(f"{where}: kernel {sz['N']} + candidates {sz['A0']} exceed n={n}")
    elif config.strategy == "constrained" and T > 0 and not config.truncate_supply:
        B = min(cap, math.sqrt(T)) / 2.0
        if s * B > math.e:
            sch = constrained_schedule(s, T, cap, config.constants)
            need = sch["N_init"] + 4 * sum(sch["sizes"][1:])
            if need > n:
                raise ConfigError(f"{where}: the SCREENING schedule needs {need} nodes, n={n}")


# -- running ---------------------------------------------------------------------


@dataclass(frozen=True)
class RunSummary:
    n_bad: int
    discoveries: int
    max_count: int
    flags: tuple[str, ...]
    trajectory: np.ndarray | None = None


def run_one(config: ExperimentConfig, t_index: int, rep: int) -> RunSummary:
    T = config.grid[t_index]
    rep_seed = derive_seed(config.seed, "replication", t_index, rep)
    graph = sample_csbm(config.params, rep_seed)
    seed = derive_seed(rep_seed, "strategy")
    s = config.s_used
    cap = config.cap_rule.cap(T)
    if config.strategy == "random":
        out = run_random(graph, Budget(T, cap), seed)
    elif config.strategy == "unconstrained":
        out = run_unconstrained(graph, s, T, config.constants, seed)
    elif config.strategy == "constrained":
        out = run_constrained(graph, s, T, cap, config.constants, seed, truncate_supply=config.truncate_supply)
    else:
        if T == 0:
            out = run_random(graph, Budget(0), seed)
        else:
            mode = (
                PathwiseCap(config.cap_rule.value, config.cap_rule.tau)
                if config.cap_rule.kind == "pathwise"
                else "unconstrained"
            )
            out = run_doubling(graph, s, T, mode, config.constants, seed, truncate_supply=config.truncate_supply)
    verify_ledger(out.ledger)
    if config.dump_ledger and rep == 0:
        path = Path(config.dump_ledger)
        if path.suffix != ".csv":
            path.mkdir(parents=True, exist_ok=True)
            path = path / f"ledger_T{T}.csv"
        dump_ledger_csv(out.ledger, path)
    return RunSummary(
        n_bad=out.ledger.n_bad,
        discoveries=out.ledger.discoveries,
        max_count=out.ledger.max_count(),
        flags=tuple(out.diagnostics.get("flags", ())),
        trajectory=out.ledger.trajectory() if config.record_trajectory else None,
    )


def _run_task(args):
    config, t_index, rep = args
    return (t_index, rep), run_one(config, t_index, rep)


@dataclass
class CellResult:
    T: int
    B_T: int | None
    strategy: str
    n_bad: np.ndarray
    discoveries: np.ndarray
    max_counts: np.ndarray
    lb_theorem: float
    lb_strong_kl: float
    flags: dict = field(default_factory=dict)
    trajectories: list | None = None

    @property
    def reps(self) -> int:
        return int(self.n_bad.size)

    @property
    def mean_nbad(self) -> float:
        return float(self.n_bad.mean())

    @property
    def std_nbad(self) -> float:
        return float(self.n_bad.std(ddof=1)) if self.reps > 1 else 0.0

    @property
    def sem_nbad(self) -> float:
        return self.std_nbad / math.sqrt(self.reps)

    @property
    def q10_nbad(self) -> float:
        return float(np.quantile(self.n_bad, 0.1))

    @property
    def q90_nbad(self) -> float:
        return float(np.quantile(self.n_bad, 0.9))

    @property
    def mean_discoveries(self) -> float:
        return float(self.discoveries.mean())


@dataclass
class AggregateResult:
    config: ExperimentConfig
    cells: list[CellResult]

    def cell(self, T: int) -> CellResult:
        for c in self.cells:
            if c.T == T:
                return c
        raise KeyError(T)


def run_experiment(config: ExperimentConfig, *, jobs: int | None = None) -> AggregateResult:
    """Run replications x grid independent simulations and aggregate per grid point."""
    for T in config.grid:
        check_cell(config, T)
    tasks = [(config, i, r) for i in range(len(config.grid)) for r in range(config.replications)]
    jobs = config.jobs if jobs is None else jobs
    results: dict[tuple[int, int], RunSummary] = {}
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for key, summary in pool.map(_run_task, tasks, chunksize=max(1, len(tasks) // (4 * jobs))):
                results[key] = summary
    else:
        for task in tasks:
            key, summary = _run_task(task)
            results[key] = summary
    cells = []
    params = config.params
    for i, T in enumerate(config.grid):
        runs = [results[(i, r)] for r in range(config.replications)]
        cap = config.cap_rule.cap(T)
        flags: dict[str, int] = {}
        for run in runs:
            for f in run.flags:
                flags[f] = flags.get(f, 0) + 1
        cells.append(
            CellResult(
                T=T,
                B_T=cap,
                strategy=config.strategy,
                n_bad=np.array([r.n_bad for r in runs], dtype=np.int64),
                discoveries=np.array([r.discoveries for r in runs], dtype=np.int64),
                max_counts=np.array([r.max_count for r in runs], dtype=np.int64),
                lb_theorem=regret_lower_bound(T, cap, params, config.rho_star, CurveKind.THEOREM),
                lb_strong_kl=regret_lower_bound(T, cap, params, config.rho_star, CurveKind.STRONG_KL),
                flags=dict(sorted(flags.items())),
                trajectories=[r.trajectory for r in runs] if config.record_trajectory else None,
            )
        )
    cells.sort(key=lambda c: c.T)
    return AggregateResult(config, cells)


# -- analysis and output ---------------------------------------------------------


def fit_exponent(result: AggregateResult | dict, T_min_cut: int = 0) -> tuple[float, float]:
    """OLS slope of log(mean n_bad) against log T over grid points with T > T_min_cut.

    ``result`` may also be a plain mapping T -> mean n_bad.
    """
    if isinstance(result, AggregateResult):
        points = {c.T: c.mean_nbad for c in result.cells}
    else:
        points = dict(result)
    xs, ys = [], []
    for T, mean in sorted(points.items()):
        if T > T_min_cut and T > 0 and mean > 0:
            xs.append(math.log(T))
            ys.append(math.log(mean))
    if len(xs) < 3:
        raise InsufficientDataError(f"need >= 3 usable grid points above T={T_min_cut}, got {len(xs)}")
    fit = stats.linregress(xs, ys)
    return float(fit.slope), float(fit.stderr)


def _fmt(x) -> str:
    if x is None:
        return "inf"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def csv_rows(result: AggregateResult) -> list[list[str]]:
    cfg = result.config
    rows = []
    for c in sorted(result.cells, key=lambda c: c.T):
        rows.append(
            [
                _fmt(c.T), _fmt(c.B_T), c.strategy, _fmt(c.reps),
                _fmt(c.mean_nbad), _fmt(c.std_nbad), _fmt(c.q10_nbad), _fmt(c.q90_nbad),
                _fmt(c.mean_discoveries), _fmt(c.lb_theorem), _fmt(c.lb_strong_kl),
                _fmt(cfg.params.s), _fmt(cfg.params.n), _fmt(cfg.params.p), _fmt(cfg.params.q), _fmt(cfg.seed),
            ]
        )
    return rows


def emit_csv(result: AggregateResult, path: str | Path) -> None:
    """Write the sweep CSV (UTF-8, LF line endings, ascending T)."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    w.writerows(csv_rows(result))
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(buf.getvalue())
    except OSError as exc:
        raise OSError(exc.errno, f"cannot write CSV to {path}: {exc.strerror}") from None


__all__ = [
    "AggregateResult",
    "CapRule",
    "CellResult",
    "ExperimentConfig",
    "check_cell",
    "emit_csv",
    "fit_exponent",
    "run_experiment",
    "run_one",
]
