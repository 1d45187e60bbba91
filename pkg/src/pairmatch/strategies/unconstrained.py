"""The three-step unconstrained algorithm: cluster a kernel, expand community 1, exploit."""

from __future__ import annotations

import math

import numpy as np

from ..errors import FeasibilityError, InvalidParamsError
from ..model import Budget
from ..oracle import HiddenGraph, QueryLedger, n_pairs
from .base import AlgoConstants, Run, StrategyOutcome, cluster_kernel, eliminate, finalize, sample_uniform_pairs
from .uniform import random_fill


def unconstrained_sizes(s: float, T: int, constants: AlgoConstants) -> dict:
    """Kernel size, candidate count and round parameters for horizon T."""
    root = math.sqrt(T)
    log_st = math.log(s * root)
    N = math.ceil(root / log_st)
    return {
        "N": N,
        "A0": math.ceil(8.0 * math.sqrt(2.0 * T)),
        "k": math.ceil(constants.C_k / s),
        "I": math.ceil(constants.C_I * log_st),
        "prob": min(1.0, constants.c_O0 * root / (s * n_pairs(N))) if N >= 2 else 1.0,
    }


def small_signal(s: float, T: int) -> bool:
    """log(s sqrt T) <= 1: every size formula degenerates and the algorithm runs random."""
    return T == 0 or s * math.sqrt(T) <= math.e


def unconstrained_steps(run: Run, s: float, constants: AlgoConstants) -> None:
    T = run.T
    if small_signal(s, T):
        run.flag("small-signal-random")
        random_fill(run)
        run.mark("random")
        return
    sz = unconstrained_sizes(s, T, constants)
    if sz["N"] > run.pool.size or sz["A0"] > run.pool.size - sz["N"]:
        raise FeasibilityError(
            f"kernel of {sz['N']} plus {sz['A0']} candidates do not fit in {run.pool.size} nodes"
        )
    run.trace["scalars"] = {"k": sz["k"], "I": sz["I"], "kernel_pair_prob": sz["prob"]}

    # Step 1
    ker = cluster_kernel(run, sz["N"], sz["prob"])
    run.trace["scalars"]["tau_hat"] = ker.tau_hat
    run.mark("step1")
    refs = ker.estimate.members(1)

    # Step 2
    rng = run.rng("expand")
    rest = np.setdiff1d(run.pool, ker.nodes, assume_unique=True)
    A0 = rng.choice(rest, size=sz["A0"], replace=False)
    run.record("A_0", A0)
    state = eliminate(run, A0, refs, sz["k"], sz["I"], ker.tau_hat, rng, break_on_empty=True)
    A_I = A0[state.active]
    run.record("A_I", A_I)
    run.trace["elimination"] = [state]
    run.mark("step2")

    # Step 3
    got = sample_uniform_pairs(run, A_I, run.remaining, run.rng("exploit"))
    run.trace["scalars"]["step3_within"] = got
    if run.remaining:
        run.flag("step3-random-fallback")
        sample_uniform_pairs(run, run.pool, run.remaining, run.rng("fallback"))
    run.mark("step3")


def run_unconstrained(
    graph: HiddenGraph,
    s_input: float,
    T: int,
    constants: AlgoConstants | None = None,
    seed: int = 0,
    *,
    B_T: int | None = None,
) -> StrategyOutcome:
    """Fixed-horizon unconstrained algorithm on the whole node set.

    ``B_T`` only sets the ledger cap (used when the constrained algorithm
    delegates here); the algorithm itself never looks at it.
    """
    if not s_input > 0:
        raise InvalidParamsError(f"s_input must be positive, got {s_input}")
    constants = constants or AlgoConstants.practical()
    ledger = QueryLedger(graph, Budget(T, B_T))
    run = Run(ledger, np.arange(graph.n), T, seed)
    unconstrained_steps(run, s_input, constants)
    return finalize(run, graph)
