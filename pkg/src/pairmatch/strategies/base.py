"""Shared machinery: constants, the per-run context, cap-aware query submission,
uniform pair sampling and the elimination rounds used by Step 2 and SCREENING."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from ..clustering import (
    DegenerateInputError,
    ObservedGraph,
    PartitionEstimate,
    balanced_split,
    goodclust,
    misclassification,
)
from ..errors import FeasibilityError, InvalidParamsError
from ..oracle import QueryLedger, n_pairs, occurrence_rank
from ..rng import derive_seed, stream

# Empirical decay constant c1 of the GOODCLUST error bound, measured with
# clustering.measure_decay_constant() on fully observed cSBM(N/2, N/2, 0.1, 0.02)
# for N in {100, 200, 400} and 20 seeds each (see tests/test_clustering.py).
GC_DECAY_CONSTANT = 0.23


class ConstantsMode(str, Enum):
    PAPER_UNCONSTRAINED = "paper-unconstrained"
    PAPER_CONSTRAINED = "paper-constrained"
    PRACTICAL = "practical"


@dataclass(frozen=True)
class AlgoConstants:
    c_O0: float
    C_k: float
    C_I: float
    mode: ConstantsMode = ConstantsMode.PRACTICAL

    def __post_init__(self) -> None:
        object.__setattr__(self, "mode", ConstantsMode(self.mode))
        if min(self.c_O0, self.C_k, self.C_I) <= 0:
            raise InvalidParamsError("constants must be positive")
        pinned = {
            ConstantsMode.PAPER_UNCONSTRAINED: (max(2.0, 1.0 / GC_DECAY_CONSTANT), 2200.0, 4.0),
            ConstantsMode.PAPER_CONSTRAINED: (max(8.0, 1.0 / GC_DECAY_CONSTANT), 2500.0, 1026.0),
        }.get(self.mode)
        if pinned is not None and (self.c_O0, self.C_k, self.C_I) != pinned:
            raise InvalidParamsError(f"{self.mode.value} mode pins (c_O0, C_k, C_I) = {pinned}")

    @classmethod
    def practical(cls, c_O0: float = 2.0, C_k: float = 2.0, C_I: float = 4.0) -> AlgoConstants:
        return cls(c_O0, C_k, C_I, ConstantsMode.PRACTICAL)

    @classmethod
    def paper_unconstrained(cls) -> AlgoConstants:
        return cls(max(2.0, 1.0 / GC_DECAY_CONSTANT), 2200.0, 4.0, ConstantsMode.PAPER_UNCONSTRAINED)

    @classmethod
    def paper_constrained(cls) -> AlgoConstants:
        return cls(max(8.0, 1.0 / GC_DECAY_CONSTANT), 2500.0, 1026.0, ConstantsMode.PAPER_CONSTRAINED)

    @classmethod
    def named(cls, name: str, constrained: bool = False) -> AlgoConstants:
        if name == "practical":
            return cls.practical()
        if name == "paper":
            return cls.paper_constrained() if constrained else cls.paper_unconstrained()
        return {
            "paper-unconstrained": cls.paper_unconstrained,
            "paper-constrained": cls.paper_constrained,
        }[name]()


@dataclass
class StrategyOutcome:
    """Final ledger plus diagnostics computed after the run from the recorded trace."""

    ledger: QueryLedger
    diagnostics: dict = field(default_factory=dict)
    trace: dict = field(default_factory=dict, repr=False)


class Run:
    """A strategy's view of one (sub)run: the ledger, the nodes it may touch and its horizon.

    Nothing here exposes the hidden labels. ``trace`` collects the node sets
    and step boundaries from which diagnostics are computed once the run ends.
    """

    def __init__(self, ledger: QueryLedger, pool: np.ndarray, T: int, seed: int) -> None:
        self.ledger = ledger
        self.pool = np.asarray(pool, dtype=np.int64)
        self.T = int(T)
        self.seed = int(seed)
        self.start = ledger.t
        self.trace: dict = {"marks": {}, "flags": [], "sets": {}}

    @property
    def used(self) -> int:
        return self.ledger.t - self.start

    @property
    def remaining(self) -> int:
        return max(0, min(self.T - self.used, self.ledger.remaining))

    @property
    def done(self) -> bool:
        return self.remaining == 0

    def rng(self, name: str, *extra: int) -> np.random.Generator:
        return stream(self.seed, name, *extra)

    def mark(self, label: str) -> None:
        self.trace["marks"][label] = self.ledger.t

    def flag(self, name: str) -> None:
        if name not in self.trace["flags"]:
            self.trace["flags"].append(name)

    def record(self, name: str, nodes) -> None:
        self.trace["sets"][name] = np.asarray(nodes, dtype=np.int64).copy()


# -- query submission ------------------------------------------------------------


def cap_accept(counts: np.ndarray, cap: int, a: np.ndarray, b: np.ndarray, limit: int | None = None) -> np.ndarray:
    """Indices of the pairs a greedy in-order pass would accept under the per-node cap.

    Pair j is accepted iff both endpoints stay within ``cap`` once the pairs
    accepted before it are counted. At most ``limit`` indices are returned.
    """
    size = a.size
    limit = size if limit is None else min(limit, size)
    if size == 0 or limit == 0:
        return np.zeros(0, dtype=np.int64)
    nodes = np.empty(2 * size, dtype=np.int64)
    nodes[0::2] = a
    nodes[1::2] = b
    load = counts[nodes] + occurrence_rank(nodes)
    over = (load > cap).reshape(-1, 2).any(axis=1)
    if not over.any():
        return np.arange(limit)
    first = int(np.argmax(over))
    if first >= limit:
        return np.arange(limit)
    local = counts.copy()
    np.add.at(local, a[:first], 1)
    np.add.at(local, b[:first], 1)
    accepted = list(range(first))
    for j, (x, y) in enumerate(zip(a[first:].tolist(), b[first:].tolist()), start=first):
        if local[x] < cap and local[y] < cap:
            local[x] += 1
            local[y] += 1
            accepted.append(j)
            if len(accepted) == limit:
                break
    return np.asarray(accepted, dtype=np.int64)


def submit(run: Run, a, b, limit: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Query distinct, unsampled pairs in order, skipping those that would break the cap
    and stopping at the run's horizon (or after ``limit`` queries).

    Returns (indices of the queried pairs, outcomes)."""
    a = np.asarray(a, dtype=np.int64)
    b = np.asarray(b, dtype=np.int64)
    left = run.remaining if limit is None else min(limit, run.remaining)
    if left <= 0 or a.size == 0:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.uint8)
    idx = cap_accept(run.ledger.counts, run.ledger.cap, a, b, limit=left)
    out = run.ledger.query_batch(a[idx], b[idx])
    return idx, out


# -- uniform pairs ---------------------------------------------------------------

ENUMERATE_MAX_PAIRS = 5_000_000


def sample_uniform_pairs(run: Run, nodes, count: int, rng: np.random.Generator) -> int:
    """Query up to ``count`` pairs within ``nodes``, each uniform among the pairs still
    available (unsampled, both endpoints under the cap). Returns how many were queried.

    Rejection sampling while most pairs are available; once the candidate yield
    drops (or the pool is small) the available pairs are enumerated and shuffled.
    """
    nodes = np.unique(np.asarray(nodes, dtype=np.int64))
    M = nodes.size
    total = n_pairs(M)
    ledger = run.ledger
    done, futile = 0, 0
    while done < count and run.remaining > 0 and M >= 2:
        need = min(count - done, run.remaining)
        if total <= ENUMERATE_MAX_PAIRS and (total <= 8 * need or futile >= 3):
            return done + _enumerate_pairs(run, nodes, need, rng)
        if futile >= 50:
            run.flag("pair-sampler-starved")
            break
        batch = int(min(max(2 * need, 256), 1 << 18))
        i = rng.integers(0, M, size=batch)
        j = rng.integers(0, M - 1, size=batch)
        j = j + (j >= i)
        a = nodes[np.minimum(i, j)]
        b = nodes[np.maximum(i, j)]
        ok = (ledger.counts[a] < ledger.cap) & (ledger.counts[b] < ledger.cap)
        a, b = a[ok], b[ok]
        _, first = np.unique(a * ledger.n + b, return_index=True)
        first.sort()
        a, b = a[first], b[first]
        fresh = ~ledger.sampled_mask(a, b)
        a, b = a[fresh], b[fresh]
        if a.size < batch // 10:
            futile += 1
        idx, _ = submit(run, a, b, limit=need)
        done += idx.size
    return done


def _enumerate_pairs(run: Run, nodes: np.ndarray, need: int, rng: np.random.Generator) -> int:
    ledger = run.ledger
    iu, ju = np.triu_indices(nodes.size, k=1)
    a, b = nodes[iu], nodes[ju]
    ok = (ledger.counts[a] < ledger.cap) & (ledger.counts[b] < ledger.cap)
    a, b = a[ok], b[ok]
    fresh = ~ledger.sampled_mask(a, b)
    a, b = a[fresh], b[fresh]
    order = rng.permutation(a.size)
    idx, _ = submit(run, a[order], b[order], limit=need)
    return int(idx.size)


# -- Step 1 ----------------------------------------------------------------------


@dataclass
class KernelResult:
    nodes: np.ndarray
    estimate: PartitionEstimate
    tau_hat: float
    n_observed: int


def cluster_kernel(run: Run, N: int, prob: float) -> KernelResult:
    """Draw N pool nodes, sample each kernel pair with probability ``prob``,
    estimate the mean connectivity and cluster the observed graph."""
    pool = run.pool
    if N > pool.size:
        raise FeasibilityError(f"kernel of {N} nodes does not fit in {pool.size} available nodes")
    kernel = run.rng("kernel").choice(pool, size=N, replace=False)
    iu, ju = np.triu_indices(N, k=1)
    pick = run.rng("kernel-pairs").random(iu.size) < min(1.0, prob)
    a, b = kernel[iu[pick]], kernel[ju[pick]]
    idx, out = submit(run, a, b)
    a, b = a[idx], b[idx]
    tau_hat = float(out.mean()) if out.size else 0.0
    if out.size == 0:
        run.flag("empty-observation-set")
    obs = ObservedGraph(kernel, a, b, out)
    try:
        est = goodclust(obs, derive_seed(run.seed, "goodclust"))
    except (DegenerateInputError, InvalidParamsError):
        run.flag("goodclust-fallback")
        est = balanced_split(kernel, run.rng("fallback"))
    run.record("kernel", kernel)
    run.record("kernel_labels", est.labels)
    return KernelResult(kernel, est, tau_hat, int(out.size))


# -- elimination rounds ----------------------------------------------------------


@dataclass
class EliminationState:
    """Per-candidate running means over the rounds of one compartment."""

    candidates: np.ndarray
    refs: np.ndarray
    sums: np.ndarray
    nq: np.ndarray
    active_sizes: list[int]
    active: np.ndarray

    @property
    def phat(self) -> np.ndarray:
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(self.nq > 0, self.sums / np.maximum(self.nq, 1), np.nan)


def _ref_orders(rng: np.random.Generator, C: int, R: int) -> np.ndarray:
    """Independent uniform orderings of range(R), one row per candidate."""
    out = np.empty((C, R), dtype=np.int32)
    rows = max(1, 2_000_000 // max(R, 1))
    for s in range(0, C, rows):
        out[s : s + rows] = np.argsort(rng.random((min(rows, C - s), R)), axis=1)
    return out


def eliminate(
    run: Run,
    candidates: np.ndarray,
    refs: np.ndarray,
    k: int,
    I: int,
    nu: float,
    rng: np.random.Generator,
    *,
    break_on_empty: bool,
) -> EliminationState:
    """I rounds of: every active candidate queries k fresh references, then keeps
    going iff its running mean is at least ``nu``.

    References are drawn without replacement per candidate (a fixed uniform
    ordering consumed k at a time). A reference at the per-node cap is skipped
    and the next one in the candidate's ordering is used; a candidate whose
    ordering runs out, or which is itself at the cap, stops accumulating and
    keeps its current mean. Candidates never queried have no mean and are
    dropped.
    """
    candidates = np.asarray(candidates, dtype=np.int64)
    refs = np.asarray(refs, dtype=np.int64)
    C, R = candidates.size, refs.size
    ledger = run.ledger
    state = EliminationState(
        candidates, refs, np.zeros(C), np.zeros(C, dtype=np.int64), [C], np.ones(C, dtype=bool)
    )
    if C == 0:
        return state
    order = _ref_orders(rng, C, R) if R else np.zeros((C, 0), dtype=np.int32)
    ptr = np.zeros(C, dtype=np.int64)
    for _ in range(I):
        if run.done:
            run.flag("horizon-reached-in-elimination")
            break
        act = np.flatnonzero(state.active)
        need = np.full(act.size, k, dtype=np.int64)
        need = np.minimum(need, np.maximum(ledger.cap - ledger.counts[candidates[act]], 0))
        while run.remaining > 0:
            take = np.minimum(need, R - ptr[act])
            sel = take > 0
            if not sel.any():
                break
            rows, take = act[sel], take[sel]
            rep = np.repeat(rows, take)
            offs = np.arange(rep.size) - np.repeat(np.cumsum(take) - take, take)
            ref_nodes = refs[order[rep, ptr[rep] + offs]]
            ptr[rows] += take
            cand_nodes = candidates[rep]
            headroom = ledger.cap - ledger.counts[ref_nodes]
            ok = occurrence_rank(ref_nodes) <= headroom
            rep, cand_nodes, ref_nodes = rep[ok], cand_nodes[ok], ref_nodes[ok]
            idx, out = submit(run, cand_nodes, ref_nodes)
            if idx.size:
                got = rep[idx]
                np.add.at(state.sums, got, out)
                np.add.at(state.nq, got, 1)
                filled = np.bincount(got, minlength=C)[act]
                need = need - filled
            if idx.size < rep.size:
                break  # horizon reached
            if not ok.all():
                continue  # refill requests that hit a capped reference
            break
        with np.errstate(invalid="ignore"):
            state.active &= state.phat >= nu
        state.active_sizes.append(int(state.active.sum()))
        if break_on_empty and not state.active.any():
            run.flag("empty-active-set")
            break
    return state


# -- diagnostics -----------------------------------------------------------------


def finalize(run: Run, graph, extra: dict | None = None) -> StrategyOutcome:
    """Compute diagnostics from the trace and the truth, after the run is over."""
    ledger = run.ledger
    _, _, _, bad = ledger.log()
    cum = np.concatenate([[0], np.cumsum(bad[run.start :], dtype=np.int64)])
    marks = dict(run.trace["marks"])
    marks.setdefault("end", ledger.t)
    bounds = sorted(marks.items(), key=lambda kv: kv[1])
    breakdown, prev = {}, run.start
    for label, t in bounds:
        breakdown[label] = int(cum[t - run.start] - cum[prev - run.start])
        prev = t
    diag = {
        "queries": run.used,
        "n_bad": int(cum[-1]),
        "regret_by_step": breakdown,
        "flags": list(run.trace["flags"]),
    }
    sets = run.trace["sets"]
    labels = graph.labels
    if "kernel" in sets:
        diag["kernel_size"] = int(sets["kernel"].size)
        diag["kernel_misclassification"] = misclassification(sets["kernel_labels"], labels[sets["kernel"]])
    for name, nodes in sets.items():
        if name.startswith("selected") or name == "A_I":
            if nodes.size:
                counts = np.bincount(labels[nodes], minlength=3)[1:]
                diag[f"{name}_minority_fraction"] = float(counts.min() / nodes.size)
    diag.update(run.trace.get("scalars", {}))
    if extra:
        diag.update(extra)
    return StrategyOutcome(ledger=ledger, diagnostics=diag, trace=run.trace)
