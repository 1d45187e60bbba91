"""Hidden cSBM graphs, the pair-query ledger and regret accounting.

Adjacency is never materialized. Each unordered pair {a, b} (a < b) owns a
64-bit seed obtained by hashing (graph key, a * n + b) with the splitmix64
finalizer; the pair is an edge iff the top 53 bits of that seed, read as a
uniform in [0, 1), fall below p (same community) or q (different
communities). Memory is O(n) whatever the number of queries.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .errors import BudgetExhausted, InvalidPairError, InvariantViolation, NRViolation, SpSViolation
from .model import Budget, BoundCurve, CurveKind, ModelParams
from .rng import derive_seed, stream

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def _mix64(x: np.ndarray) -> np.ndarray:
    """splitmix64 finalizer on a uint64 array (wrapping arithmetic)."""
    x = x ^ (x >> np.uint64(30))
    x = x * _M1
    x = x ^ (x >> np.uint64(27))
    x = x * _M2
    return x ^ (x >> np.uint64(31))


def occurrence_rank(nodes: np.ndarray) -> np.ndarray:
    """1-based rank of each entry among equal entries, in array order."""
    nodes = np.asarray(nodes)
    if nodes.size == 0:
        return np.zeros(0, dtype=np.int64)
    order = np.argsort(nodes, kind="stable")
    srt = nodes[order]
    idx = np.arange(srt.size)
    starts = np.ones(srt.size, dtype=bool)
    starts[1:] = srt[1:] != srt[:-1]
    first = np.maximum.accumulate(np.where(starts, idx, 0))
    rank = np.empty(srt.size, dtype=np.int64)
    rank[order] = idx - first + 1
    return rank


@dataclass(frozen=True, eq=False)
class HiddenGraph:
    """Ground truth: balanced labels in {1, 2} over nodes 0..n-1 and a lazy adjacency."""

    params: ModelParams
    seed: int
    labels: np.ndarray = field(repr=False)
    edge_key: np.uint64 = field(repr=False)

    @property
    def n(self) -> int:
        return self.params.n

    def pair_keys(self, a, b) -> np.ndarray:
        a = np.asarray(a, dtype=np.int64)
        b = np.asarray(b, dtype=np.int64)
        lo = np.minimum(a, b).astype(np.uint64)
        hi = np.maximum(a, b).astype(np.uint64)
        return lo * np.uint64(self.n) + hi

    def pair_seed(self, a, b) -> np.ndarray:
        """Persistent per-pair 64-bit seed."""
        keys = np.atleast_1d(self.pair_keys(a, b))
        return _mix64(self.edge_key ^ _mix64(keys + _GOLDEN))

    def same_community(self, a, b) -> np.ndarray:
        return self.labels[np.asarray(a)] == self.labels[np.asarray(b)]

    def adjacency(self, a, b) -> np.ndarray:
        """A_ab for arrays of pairs, as uint8. Only the ledger should call this."""
        a = np.atleast_1d(np.asarray(a, dtype=np.int64))
        b = np.atleast_1d(np.asarray(b, dtype=np.int64))
        u = (self.pair_seed(a, b) >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))
        prob = np.where(self.same_community(a, b), self.params.p, self.params.q)
        return (u < prob).astype(np.uint8)


def sample_csbm(params: ModelParams, seed: int) -> HiddenGraph:
    """Draw a balanced cSBM(n/2, n/2, p, q) instance; identical (params, seed) give identical graphs."""
    rng = stream(seed, "labels")
    labels = np.repeat(np.array([1, 2], dtype=np.int8), params.n // 2)
    rng.shuffle(labels)
    labels.setflags(write=False)
    key = np.uint64(derive_seed(seed, "edges"))
    return HiddenGraph(params=params, seed=int(seed), labels=labels, edge_key=key)


def expected_random_regret(n: int, T: int) -> float:
    """Exact mean sampling-regret of uniform sampling without replacement: T (n/2) / (n - 1)."""
    if n < 2:
        raise InvalidPairError(f"need at least two nodes, got n={n}")
    if T < 0 or T > n * (n - 1) // 2:
        raise BudgetExhausted(f"T={T} outside [0, C({n}, 2)]")
    return T * (n / 2) / (n - 1)


class QueryLedger:
    """Everything a strategy has observed, plus the oracle's regret accounting.

    ``query_batch`` is atomic: a batch that would break (NR), (SpS) or the
    horizon raises before anything is recorded. ``cap`` may be lowered or
    raised between calls (the doubling wrappers do so per epoch); the history
    is kept so ``verify_ledger`` can check every query against the cap in
    force when it was made. ``cap_schedule`` optionally adds a time-varying
    cap t -> B_t checked at the 1-based index of each query.
    """

    def __init__(
        self,
        graph: HiddenGraph,
        budget: Budget,
        *,
        cap_schedule: Callable[[np.ndarray], np.ndarray] | None = None,
    ) -> None:
        self._graph = graph
        self.budget = budget
        self.n = graph.n
        self.horizon = budget.T
        self.t = 0
        self.n_bad = 0
        self.discoveries = 0
        self.counts = np.zeros(self.n, dtype=np.int64)
        self.cap_schedule = cap_schedule
        self._cap = budget.cap(self.n)
        self._cap_history: list[tuple[int, int]] = [(0, self._cap)]
        self._outcomes: dict[int, int] = {}
        self._chunks: list[tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]] = []
        self._log_cache: tuple[np.ndarray, ...] | None = None

    # -- observable state ------------------------------------------------------
    @property
    def cap(self) -> int:
        return self._cap

    @cap.setter
    def cap(self, value: int) -> None:
        value = int(value)
        if value < 1:
            raise SpSViolation(f"cap must be >= 1, got {value}")
        self._cap = value
        self._cap_history.append((self.t, value))

    @property
    def remaining(self) -> int:
        return self.horizon - self.t

    def is_sampled(self, a: int, b: int) -> bool:
        return int(self._graph.pair_keys(a, b)) in self._outcomes

    def sampled_mask(self, a, b) -> np.ndarray:
        keys = np.atleast_1d(self._graph.pair_keys(a, b)).tolist()
        d = self._outcomes
        return np.fromiter((k in d for k in keys), dtype=bool, count=len(keys))

    def outcome(self, a: int, b: int) -> int:
        return self._outcomes[int(self._graph.pair_keys(a, b))]

    def headroom(self, nodes) -> np.ndarray:
        """How many more queries each node may take under the current cap."""
        return self._cap - self.counts[np.asarray(nodes)]

    # -- queries ---------------------------------------------------------------
    def query(self, a: int, b: int) -> int:
        return int(self.query_batch(np.array([a]), np.array([b]))[0])

    def query_batch(self, a, b) -> np.ndarray:
        a = np.atleast_1d(np.asarray(a, dtype=np.int64))
        b = np.atleast_1d(np.asarray(b, dtype=np.int64))
        if a.shape != b.shape or a.ndim != 1:
            raise InvalidPairError("endpoint arrays must be 1-D and of equal length")
        size = a.size
        if size == 0:
            return np.zeros(0, dtype=np.uint8)
        if size > self.remaining:
            raise BudgetExhausted(f"{size} queries requested, {self.remaining} left of T={self.horizon}")
        lo = np.minimum(a, b)
        hi = np.maximum(a, b)
        if lo.min() < 0 or hi.max() >= self.n:
            raise InvalidPairError("node index out of range")
        if np.any(lo == hi):
            raise InvalidPairError("self-loops are not pairs")
        keys = lo * self.n + hi
        key_list = keys.tolist()
        if len(set(key_list)) != size:
            raise NRViolation("a pair appears twice in the same batch")
        d = self._outcomes
        for k in key_list:
            if k in d:
                raise NRViolation(f"pair ({k // self.n}, {k % self.n}) already sampled")
        nodes = np.empty(2 * size, dtype=np.int64)
        nodes[0::2] = lo
        nodes[1::2] = hi
        load = self.counts[nodes] + occurrence_rank(nodes)
        if load.max() > self._cap:
            bad = int(nodes[np.argmax(load > self._cap)])
            raise SpSViolation(f"node {bad} would exceed its cap B_T={self._cap}")
        if self.cap_schedule is not None:
            times = self.t + 1 + np.arange(size).repeat(2)
            if np.any(load > self.cap_schedule(times)):
                bad = int(nodes[np.argmax(load > self.cap_schedule(times))])
                raise SpSViolation(f"node {bad} would exceed the pathwise cap")

        out = self._graph.adjacency(lo, hi)
        bad_mask = ~self._graph.same_community(lo, hi)
        np.add.at(self.counts, nodes, 1)
        d.update(zip(key_list, out.tolist()))
        self.t += size
        self.n_bad += int(bad_mask.sum())
        self.discoveries += int(out.sum())
        self._chunks.append((lo, hi, out, bad_mask))
        self._log_cache = None
        return out

    # -- records ---------------------------------------------------------------
    def log(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """(node_a, node_b, outcome, is_bad) for every query, in query order."""
        if self._log_cache is None:
            if self._chunks:
                self._log_cache = tuple(np.concatenate(col) for col in zip(*self._chunks))
            else:
                self._log_cache = (
                    np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros(0, np.uint8), np.zeros(0, bool)
                )
            self._chunks = [self._log_cache] if self._chunks else []
        return self._log_cache

    @property
    def cap_history(self) -> list[tuple[int, int]]:
        return list(self._cap_history)

    def max_count(self) -> int:
        return int(self.counts.max()) if self.n else 0

    def trajectory(self, max_points: int = 1024) -> np.ndarray:
        """(t, n_bad(t), discoveries(t)) rows, downsampled to at most ``max_points``."""
        _, _, out, bad = self.log()
        if self.t == 0:
            return np.zeros((0, 3), dtype=np.int64)
        ts = np.unique(np.linspace(1, self.t, num=min(max_points, self.t)).round().astype(np.int64))
        cum_bad = np.cumsum(bad, dtype=np.int64)[ts - 1]
        cum_disc = np.cumsum(out, dtype=np.int64)[ts - 1]
        return np.column_stack([ts, cum_bad, cum_disc])

    def signature(self) -> bytes:
        """Bytes identifying the full query sequence; equal iff replays match."""
        a, b, out, bad = self.log()
        return b"".join(x.tobytes() for x in (a, b, out, bad.astype(np.uint8)))


def verify_ledger(ledger: QueryLedger) -> None:
    """Re-derive every invariant from the raw log; raise ``InvariantViolation`` on any mismatch."""
    a, b, out, bad = ledger.log()
    t = a.size
    n = ledger.n
    if t != ledger.t:
        raise InvariantViolation(f"log holds {t} queries, counter says {ledger.t}")
    if t > ledger.horizon:
        raise InvariantViolation("horizon exceeded")
    if np.any(a == b) or (t and (min(a.min(), b.min()) < 0 or max(a.max(), b.max()) >= n)):
        raise InvariantViolation("invalid pair in log")
    keys = np.minimum(a, b) * n + np.maximum(a, b)
    if np.unique(keys).size != t:
        raise InvariantViolation("(NR) violated: a pair was sampled twice")
    nodes = np.empty(2 * t, dtype=np.int64)
    nodes[0::2] = a
    nodes[1::2] = b
    counts = np.bincount(nodes, minlength=n)
    if not np.array_equal(counts, ledger.counts):
        raise InvariantViolation("per-node counts disagree with the log")
    if int(counts.sum()) != 2 * t:
        raise InvariantViolation("handshake identity sum N_a = 2t violated")
    if int(bad.sum()) != ledger.n_bad or int(out.sum()) != ledger.discoveries:
        raise InvariantViolation("regret counters disagree with the log")
    graph = ledger._graph
    if t and not np.array_equal(bad, ~graph.same_community(a, b)):
        raise InvariantViolation("is_bad flags disagree with the hidden labels")
    if t and not np.array_equal(out, graph.adjacency(a, b)):
        raise InvariantViolation("recorded outcomes disagree with the per-pair seeds")
    # pathwise (SpS): the k-th appearance of a node must respect the cap in force then
    rank = occurrence_rank(nodes)
    times = np.arange(1, t + 1).repeat(2)
    starts = np.array([s for s, _ in ledger.cap_history])
    caps = np.array([c for _, c in ledger.cap_history])
    # a cap set at time s applies to queries s+1, s+2, ...
    in_force = caps[np.searchsorted(starts, times - 1, side="right") - 1] if t else caps[:0]
    if t and np.any(rank > in_force):
        raise InvariantViolation("(SpS) violated pathwise")
    if t and ledger.cap_schedule is not None and np.any(rank > ledger.cap_schedule(times)):
        raise InvariantViolation("pathwise cap schedule violated")


@dataclass
class RegretReport:
    trajectory: np.ndarray
    n_bad: int
    discoveries: int
    regret: float
    lb_theorem: float
    lb_strong_kl: float
    T: int


def regret_report(
    ledger: QueryLedger, params: ModelParams, *, rho_star: float | None = None, max_points: int = 1024
) -> RegretReport:
    T = ledger.horizon
    B = ledger.budget.B_T
    return RegretReport(
        trajectory=ledger.trajectory(max_points),
        n_bad=ledger.n_bad,
        discoveries=ledger.discoveries,
        regret=(params.p - params.q) * ledger.n_bad,
        lb_theorem=BoundCurve(CurveKind.THEOREM, params, rho_star).value(T, B),
        lb_strong_kl=BoundCurve(CurveKind.STRONG_KL, params, rho_star).value(T, B),
        T=T,
    )


def dump_ledger_csv(ledger: QueryLedger, path: str | Path) -> None:
    """Write ``t,node_a,node_b,outcome,is_bad`` rows (t is 1-based)."""
    a, b, out, bad = ledger.log()
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "node_a", "node_b", "outcome", "is_bad"])
        for i in range(a.size):
            w.writerow([i + 1, int(a[i]), int(b[i]), int(out[i]), int(bad[i])])


def pair_from_index(index, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Map linear indices in [0, C(n, 2)) to pairs (a, b), a < b, in row-major order."""
    k = np.asarray(index, dtype=np.int64)
    # row a starts at offset a*n - a*(a+1)/2 ; invert the quadratic then correct rounding
    disc = (2 * n - 1) ** 2 - 8 * k.astype(np.float64)
    a = np.floor(((2 * n - 1) - np.sqrt(np.maximum(disc, 0.0))) / 2).astype(np.int64)
    start = a * n - a * (a + 1) // 2
    a = np.where(start > k, a - 1, a)
    start = a * n - a * (a + 1) // 2
    nxt = (a + 1) * n - (a + 1) * (a + 2) // 2
    a = np.where(nxt <= k, a + 1, a)
    start = a * n - a * (a + 1) // 2
    b = k - start + a + 1
    return a, b


def n_pairs(m: int) -> int:
    return m * (m - 1) // 2
