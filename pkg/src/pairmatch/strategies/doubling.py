"""Horizon-free wrappers: restart a fixed-horizon algorithm on fresh nodes at t = 2^l."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import FeasibilityError, InvalidParamsError
from ..model import Budget, snap_ceil
from ..oracle import HiddenGraph, QueryLedger
from ..rng import derive_seed
from .base import AlgoConstants, Run, StrategyOutcome, finalize
from .constrained import constrained_steps
from .unconstrained import unconstrained_steps


@dataclass(frozen=True)
class PathwiseCap:
    """B_t = t^gamma / (log t)^tau, enforced as ceil(B_t) and with B_t := 1 for t < 3."""

    gamma: float
    tau: float = 0.0

    def __post_init__(self) -> None:
        if not 0.0 < self.gamma <= 0.5:
            raise InvalidParamsError(f"gamma must lie in (0, 1/2], got {self.gamma}")
        if self.tau < 0:
            raise InvalidParamsError(f"tau must be >= 0, got {self.tau}")

    def __call__(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=np.float64)
        with np.errstate(divide="ignore", invalid="ignore"):
            raw = snap_ceil(t**self.gamma / np.log(np.maximum(t, 3.0)) ** self.tau)
        return np.where(t < 3, 1, raw).astype(np.int64)


def epochs(t_max: int) -> list[tuple[int, int]]:
    """(first, last) global query times of each epoch: [1], then (2^l, 2^(l+1)] for l >= 0."""
    out = [(1, 1)] if t_max >= 1 else []
    l = 0
    while 2**l < t_max:
        out.append((2**l + 1, min(2 ** (l + 1), t_max)))
        l += 1
    return out


def run_doubling(
    graph: HiddenGraph,
    s_input: float,
    t_max: int,
    mode: str | PathwiseCap = "unconstrained",
    constants: AlgoConstants | None = None,
    seed: int = 0,
    *,
    truncate_supply: bool = False,
) -> StrategyOutcome:
    """Run the base algorithm epoch by epoch, each on nodes never touched before.

    ``mode`` is "unconstrained" or a PathwiseCap; in the latter case each epoch
    runs the constrained algorithm with the smallest cap over its time window,
    and the ledger checks N_a(t) <= ceil(B_t) at every step.
    """
    if t_max < 1:
        raise InvalidParamsError(f"t_max must be >= 1, got {t_max}")
    if not s_input > 0:
        raise InvalidParamsError(f"s_input must be positive, got {s_input}")
    constants = constants or AlgoConstants.practical()
    pathwise = isinstance(mode, PathwiseCap)
    if not pathwise and mode != "unconstrained":
        raise InvalidParamsError(f"unknown doubling mode {mode!r}")
    ledger = QueryLedger(graph, Budget(t_max, 1 if pathwise else None), cap_schedule=mode if pathwise else None)
    top = Run(ledger, np.arange(graph.n), t_max, seed)
    windows = []
    for l, (first, last) in enumerate(epochs(t_max)):
        pool = np.flatnonzero(ledger.counts == 0)
        run = Run(ledger, pool, last - first + 1, derive_seed(seed, "epoch", l))
        try:
            if pathwise:
                cap = int(mode(np.arange(first - 1, last + 1)).min()) if first > 1 else 1
                ledger.cap = max(1, cap)
                constrained_steps(run, s_input, ledger.cap, constants, truncate_supply=truncate_supply)
            else:
                unconstrained_steps(run, s_input, constants)
            if run.remaining:
                raise FeasibilityError(f"epoch {l} stalled after {run.used} queries")
        except FeasibilityError as exc:
            top.trace["epochs"] = windows
            raise FeasibilityError(f"node supply exhausted in epoch {l}: {exc}", partial=finalize(top, graph)) from exc
        windows.append({"first": first, "last": last, "pool": pool.size, "flags": run.trace["flags"]})
    top.trace["epochs"] = windows
    return finalize(top, graph, {"epochs": len(windows)})
