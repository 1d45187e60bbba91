"""The budget-constrained algorithm and its SCREENING routine."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import FeasibilityError, InvalidParamsError
from ..model import Budget
from ..oracle import HiddenGraph, QueryLedger, n_pairs
from .base import (
    AlgoConstants,
    EliminationState,
    Run,
    StrategyOutcome,
    cluster_kernel,
    eliminate,
    finalize,
    sample_uniform_pairs,
    submit,
)
from .unconstrained import unconstrained_steps
from .uniform import random_fill

DELEGATION_FACTOR = 17.0


@dataclass
class ScreeningState:
    """What one SCREENING call did; kept for invariant checks and diagnostics."""

    A0: np.ndarray
    compartments: list[np.ndarray]
    parts: list[np.ndarray]
    rounds: list[EliminationState]
    k: int
    I: int
    m: int
    nu: float
    fallback: bool = False
    short_kernel: bool = False
    flags: list[str] = field(default_factory=list)


def screening_sizes(s: float, B: float, constants: AlgoConstants) -> tuple[int, int]:
    k = math.ceil(constants.C_k / s)
    I = max(1, math.ceil(constants.C_I * math.log(s * B)))
    return k, I


def screening(
    kernel,
    N_prime: int,
    B: float,
    nu: float,
    V,
    run: Run,
    constants: AlgoConstants,
    s: float,
    call: int = 0,
    *,
    allow_short_kernel: bool = False,
    truncate_supply: bool = False,
) -> tuple[np.ndarray, np.ndarray, ScreeningState]:
    """Classify fresh nodes of V against a reference kernel under per-node caps.

    Returns (selected, V_remaining, state). ``allow_short_kernel`` replaces the
    m = 0 error (kernel smaller than kI) by a single compartment holding the
    whole kernel; ``truncate_supply`` draws min(4N', |V|) candidates instead of
    raising when V is short.
    """
    kernel = np.asarray(kernel, dtype=np.int64)
    V = np.asarray(V, dtype=np.int64)
    if kernel.size == 0:
        raise InvalidParamsError("empty reference kernel")
    k, I = screening_sizes(s, B, constants)
    want = 4 * N_prime
    flags = []
    if V.size < want:
        if not truncate_supply:
            raise FeasibilityError(f"SCREENING needs {want} fresh nodes, only {V.size} left")
        want = V.size
        flags.append("supply-truncated")
    m = kernel.size // (k * I)
    short = False
    if m == 0:
        if not allow_short_kernel:
            raise FeasibilityError(f"kernel of {kernel.size} nodes is smaller than kI={k * I}")
        m, short = 1, True
        flags.append("short-kernel")
    rng = run.rng("screening", call)
    A0 = rng.choice(V, size=want, replace=False) if want else V[:0]
    perm = rng.permutation(kernel)
    comps = [perm[j * k * I : (j + 1) * k * I] for j in range(m)] if not short else [perm]
    parts = np.array_split(rng.permutation(A0), m)
    rounds = []
    for j in range(m):
        rounds.append(eliminate(run, parts[j], comps[j], k, I, nu, rng, break_on_empty=False))
    survivors = np.concatenate([st.candidates[st.active] for st in rounds]) if rounds else A0[:0]
    fallback = survivors.size < N_prime
    if fallback:
        flags.append("screening-fallback")
        source = A0
    else:
        source = survivors
    selected = rng.choice(source, size=min(N_prime, source.size), replace=False)
    V_rest = np.setdiff1d(V, A0, assume_unique=True)
    state = ScreeningState(A0, comps, parts, rounds, k, I, m, nu, fallback, short, flags)
    return selected, V_rest, state


def constrained_schedule(s: float, T: int, B_T: int, constants: AlgoConstants) -> dict:
    B = min(B_T, math.sqrt(T)) / 2.0
    log_sb = math.log(s * B)
    N_init = math.ceil(B / log_sb)
    N0 = math.ceil(N_init / 2)
    TB = math.ceil(T / B)
    growth = math.floor(log_sb)
    floor_growth = growth < 2
    growth = max(growth, 2)
    t_f = math.ceil(math.log(TB / N0) / math.log(growth)) if TB > N0 else 0
    single = t_f <= 0
    t_f = max(t_f, 1)
    sizes = [min(N0 * growth**t, TB) for t in range(t_f + 1)]
    return {
        "B": B,
        "N_init": N_init,
        "N0": N0,
        "TB": TB,
        "growth": growth,
        "growth_floored": floor_growth,
        "t_f": t_f,
        "single_round": single,
        "sizes": sizes,
        "prob": min(1.0, constants.c_O0 * (B / s) / n_pairs(N_init)) if N_init >= 2 else 1.0,
    }


def round_robin_pairs(run: Run, nodes: np.ndarray) -> int:
    """Pair the i-th node (sorted order) with the (i + o)-th for o = 1, 2, ...,
    skipping sampled pairs and capped nodes, until the horizon or the offsets run out."""
    nodes = np.sort(np.asarray(nodes, dtype=np.int64))
    M = nodes.size
    done = 0
    for o in range(1, M // 2 + 1):
        if run.remaining == 0:
            break
        i = np.arange(M if 2 * o != M else M // 2)
        a, b = nodes[i], nodes[(i + o) % M]
        lo, hi = np.minimum(a, b), np.maximum(a, b)
        ok = (run.ledger.counts[lo] < run.ledger.cap) & (run.ledger.counts[hi] < run.ledger.cap)
        lo, hi = lo[ok], hi[ok]
        fresh = ~run.ledger.sampled_mask(lo, hi)
        idx, _ = submit(run, lo[fresh], hi[fresh])
        done += idx.size
    return done


def constrained_steps(
    run: Run, s: float, B_T: int, constants: AlgoConstants, *, truncate_supply: bool = False
) -> None:
    T = run.T
    if T == 0:
        return
    if B_T >= DELEGATION_FACTOR * math.sqrt(T):
        run.flag("delegated-unconstrained")
        unconstrained_steps(run, s, constants)
        return
    B = min(B_T, math.sqrt(T)) / 2.0
    if s * B <= math.e:
        run.flag("small-signal-random")
        random_fill(run)
        run.mark("random")
        return
    sch = constrained_schedule(s, T, B_T, constants)
    if sch["growth_floored"]:
        run.flag("growth-floored")
    if sch["single_round"]:
        run.flag("single-screening-round")
    need = sch["N_init"] + 4 * sum(sch["sizes"][1:])
    if need > run.pool.size:
        if not truncate_supply:
            raise FeasibilityError(
                f"constrained schedule needs {need} fresh nodes, only {run.pool.size} available"
            )
        run.flag("supply-truncated")
    run.trace["scalars"] = {
        "B": sch["B"],
        "t_f": sch["t_f"],
        "schedule": sch["sizes"],
        "kernel_pair_prob": sch["prob"],
    }

    # Step 1
    ker = cluster_kernel(run, sch["N_init"], sch["prob"])
    run.trace["scalars"]["tau_hat"] = ker.tau_hat
    run.mark("step1")

    # Step 2
    comm1 = ker.estimate.members(1)
    current = run.rng("seed-pick").choice(comm1, size=min(sch["N0"], comm1.size), replace=False)
    V = np.setdiff1d(run.pool, ker.nodes, assume_unique=True)
    calls = []
    for t in range(1, sch["t_f"] + 1):
        if V.size == 0 or run.done:
            run.flag("schedule-cut-short")
            break
        current, V, st = screening(
            current, sch["sizes"][t], sch["B"], ker.tau_hat, V, run, constants, s, t,
            allow_short_kernel=True, truncate_supply=truncate_supply,
        )
        calls.append(st)
        for f in st.flags:
            run.flag(f)
    run.record("selected_final", current)
    run.trace["screening"] = calls
    run.mark("step2")

    # Step 3
    got = round_robin_pairs(run, current)
    run.trace["scalars"]["step3_within"] = got
    if run.remaining:
        run.flag("step3-untouched-fallback")
        untouched = run.pool[run.ledger.counts[run.pool] == 0]
        sample_uniform_pairs(run, untouched, run.remaining, run.rng("fallback"))
    if run.remaining:
        run.flag("step3-pool-fallback")
        sample_uniform_pairs(run, run.pool, run.remaining, run.rng("fallback", 1))
    run.mark("step3")


def run_constrained(
    graph: HiddenGraph,
    s_input: float,
    T: int,
    B_T: int,
    constants: AlgoConstants | None = None,
    seed: int = 0,
    *,
    truncate_supply: bool = False,
) -> StrategyOutcome:
    """Fixed-horizon constrained algorithm; no node ever exceeds B_T queries."""
    if not s_input > 0:
        raise InvalidParamsError(f"s_input must be positive, got {s_input}")
    constants = constants or AlgoConstants.practical()
    ledger = QueryLedger(graph, Budget(T, B_T))
    run = Run(ledger, np.arange(graph.n), T, seed)
    constrained_steps(run, s_input, B_T, constants, truncate_supply=truncate_supply)
    outcome = finalize(run, graph)
    if run.remaining:
        raise FeasibilityError(
            f"constrained run stalled after {run.used} of {T} queries under B_T={B_T}", partial=outcome
        )
    return outcome
