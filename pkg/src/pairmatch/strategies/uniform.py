"""Uniform-random pair sampling, the reference strategy."""

from __future__ import annotations

import numpy as np

from ..errors import FeasibilityError
from ..model import Budget
from ..oracle import HiddenGraph, QueryLedger, n_pairs
from .base import Run, StrategyOutcome, finalize, sample_uniform_pairs


def check_random_feasible(n: int, budget: Budget) -> None:
    if budget.T > n_pairs(n):
        raise FeasibilityError(f"T={budget.T} exceeds the C({n}, 2)={n_pairs(n)} pairs")
    if budget.B_T is not None and budget.T > n * budget.B_T // 2:
        raise FeasibilityError(f"T={budget.T} exceeds n*B_T/2={n * budget.B_T // 2}")


def random_fill(run: Run, label: str = "random") -> None:
    """Spend the rest of the run's horizon on uniform pairs within its pool."""
    sample_uniform_pairs(run, run.pool, run.remaining, run.rng(label))


def run_random(graph: HiddenGraph, budget: Budget, seed: int) -> StrategyOutcome:
    """Sample T distinct pairs, each uniform among pairs whose endpoints are under the cap."""
    check_random_feasible(graph.n, budget)
    ledger = QueryLedger(graph, budget)
    run = Run(ledger, np.arange(graph.n), budget.T, seed)
    random_fill(run)
    outcome = finalize(run, graph)
    if run.remaining:
        raise FeasibilityError(
            f"random sampling stalled after {run.used} of {budget.T} queries under B_T={budget.B_T}",
            partial=outcome,
        )
    return outcome
