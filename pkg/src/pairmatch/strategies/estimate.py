"""Estimating s from the non-backtracking spectra of growing fully sampled subgraphs."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..clustering import NBSpectrum, ObservedGraph, nb_spectrum
from ..errors import DegenerateInputError, NoDetectionError
from ..model import Budget
from ..oracle import HiddenGraph, QueryLedger, n_pairs
from ..rng import stream


@dataclass(frozen=True)
class SEstimate:
    s_hat: float
    queries_used: int
    k_hat: int
    s_hat_pair_divisor: float
    spectrum: NBSpectrum

    def __iter__(self):
        return iter((self.s_hat, self.queries_used, self.k_hat))


def estimate_s(
    graph: HiddenGraph, ledger: QueryLedger | None = None, max_nodes: int | None = None, seed: int = 0
) -> SEstimate:
    """At step k = 1, 2, ... draw 2^k fresh nodes, query all their pairs and stop once
    |lambda2|^2 > lambda1 on the non-backtracking operator of the observed graph.

    The estimate divides by the node count 2^k; the variant dividing by the
    pair count C(2^k, 2) is reported as ``s_hat_pair_divisor``. Queries go
    through ``ledger`` (a fresh unbounded one when omitted) and count toward
    its budget.
    """
    if ledger is None:
        ledger = QueryLedger(graph, Budget(n_pairs(graph.n)))
    max_nodes = graph.n if max_nodes is None else max_nodes
    rng = stream(seed, "estimate-s")
    fresh = np.flatnonzero(ledger.counts == 0)
    rng.shuffle(fresh)
    used_nodes = 0
    start = ledger.t
    k = 0
    while True:
        k += 1
        size = 2**k
        if used_nodes + size > min(max_nodes, fresh.size) or ledger.remaining < n_pairs(size):
            raise NoDetectionError(
                f"no detection within {used_nodes} nodes (step {k} needs {size} more)", ledger.t - start
            )
        nodes = fresh[used_nodes : used_nodes + size]
        used_nodes += size
        iu, ju = np.triu_indices(size, k=1)
        a, b = nodes[iu], nodes[ju]
        out = ledger.query_batch(a, b)
        try:
            spec = nb_spectrum(ObservedGraph(nodes, a, b, out))
        except DegenerateInputError:
            continue
        if spec.detects:
            ratio = 2.0 * spec.lambda2_mod**2 / spec.lambda1
            return SEstimate(ratio / size, ledger.t - start, k, ratio / n_pairs(size), spec)
