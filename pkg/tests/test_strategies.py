from __future__ import annotations

import hashlib
import math
from dataclasses import replace

import numpy as np
import pytest

from pairmatch import Budget, ModelParams, QueryLedger, sample_csbm, verify_ledger
from pairmatch.errors import FeasibilityError, InvalidParamsError, NoDetectionError
from pairmatch.oracle import n_pairs
from pairmatch.strategies import (
    AlgoConstants,
    ConstantsMode,
    PathwiseCap,
    constrained_schedule,
    epochs,
    estimate_s,
    run_constrained,
    run_doubling,
    run_random,
    run_unconstrained,
    screening,
    unconstrained_sizes,
)
from pairmatch.strategies.base import Run, eliminate

from conftest import touched_by_window

PRACTICAL = AlgoConstants.practical()


# -- constants ------------------------------------------------------------------


def test_constants_modes():
    pu, pc = AlgoConstants.paper_unconstrained(), AlgoConstants.paper_constrained()
    assert (pu.C_k, pu.C_I, pu.mode) == (2200, 4, ConstantsMode.PAPER_UNCONSTRAINED)
    assert (pc.C_k, pc.C_I, pc.mode) == (2500, 1026, ConstantsMode.PAPER_CONSTRAINED)
    assert pu.c_O0 >= 2 and pc.c_O0 >= 8
    assert (PRACTICAL.c_O0, PRACTICAL.C_k, PRACTICAL.C_I) == (2, 2, 4)
    with pytest.raises(InvalidParamsError):
        AlgoConstants.practical(C_k=0)
    with pytest.raises(InvalidParamsError):
        replace(pu, C_k=3)
    assert AlgoConstants.named("paper", constrained=True) == pc


# -- random ---------------------------------------------------------------------------


def test_random_empty_horizon(graph_small):
    out = run_random(graph_small, Budget(0), 0)
    assert out.ledger.t == 0 and out.ledger.n_bad == 0


def test_random_exhaustive_census():
    for seed in range(5):
        out = run_random(sample_csbm(ModelParams(6, 0.4, 0.1), seed), Budget(15), seed)
        assert out.ledger.n_bad == 9
        verify_ledger(out.ledger)


def test_random_respects_cap(graph_small):
    out = run_random(graph_small, Budget(4000, 4), 3)
    assert out.ledger.t == 4000 and out.ledger.max_count() <= 4
    verify_ledger(out.ledger)


def test_random_infeasible_budget(graph_small):
    with pytest.raises(FeasibilityError):
        run_random(graph_small, Budget(2001, 2), 0)
    with pytest.raises(FeasibilityError):
        run_random(sample_csbm(ModelParams(6, 0.4, 0.1), 0), Budget(16), 0)


# -- unconstrained ---------------------------------------------------------------------


def test_unconstrained_empty_horizon(graph_small, params_small):
    out = run_unconstrained(graph_small, params_small.s, 0, PRACTICAL, 0)
    assert out.ledger.t == 0


def test_unconstrained_golden_replay():
    params = ModelParams(5000, 0.4, 0.1)
    runs = [run_unconstrained(sample_csbm(params, 20240101), params.s, 40000, PRACTICAL, 7) for _ in range(2)]
    assert runs[0].ledger.signature() == runs[1].ledger.signature()
    assert runs[0].ledger.t == 40000
    # recorded on the first verified run
    assert runs[0].ledger.n_bad == GOLDEN_NBAD
    verify_ledger(runs[0].ledger)


GOLDEN_NBAD = 15423


def test_unconstrained_sizes():
    sz = unconstrained_sizes(0.18, 40000, PRACTICAL)
    log_st = math.log(0.18 * 200)
    assert sz["N"] == math.ceil(200 / log_st)
    assert sz["A0"] == math.ceil(8 * math.sqrt(80000))
    assert sz["k"] == math.ceil(2 / 0.18)
    assert sz["I"] == math.ceil(4 * log_st)
    assert sz["prob"] == pytest.approx(min(1.0, 2 * 200 / (0.18 * n_pairs(sz["N"]))))


def test_unconstrained_invalid_and_infeasible(params_small):
    g = sample_csbm(ModelParams(200, 0.4, 0.1), 0)
    with pytest.raises(InvalidParamsError):
        run_unconstrained(g, 0.0, 100)
    with pytest.raises(FeasibilityError):
        run_unconstrained(g, 0.18, 9000)


def test_unconstrained_small_signal_is_random(graph_small):
    out = run_unconstrained(graph_small, 0.01, 5000, PRACTICAL, 0)
    assert "small-signal-random" in out.diagnostics["flags"]
    assert out.ledger.t == 5000


class _Masked:
    """Delegates queries to a real graph but shows garbage labels to anything that peeks."""

    def __init__(self, graph, seed):
        self._g = graph
        self.params = graph.params
        self.seed = graph.seed
        self.labels = np.random.default_rng(seed).permutation(graph.labels)

    n = property(lambda self: self._g.n)

    def pair_keys(self, a, b):
        return self._g.pair_keys(a, b)

    def adjacency(self, a, b):
        return self._g.adjacency(a, b)

    def same_community(self, a, b):
        return self._g.same_community(a, b)


@pytest.mark.parametrize("which", ["unconstrained", "constrained", "doubling"])
def test_truth_quarantine(params_small, which):
    g = sample_csbm(params_small, 5)
    s = params_small.s

    def go(graph):
        if which == "unconstrained":
            return run_unconstrained(graph, s, 6000, PRACTICAL, 1)
        if which == "constrained":
            return run_constrained(graph, s, 6000, 40, PRACTICAL, 1, truncate_supply=True)
        return run_doubling(graph, s, 6000, "unconstrained", PRACTICAL, 1)

    real, masked = go(g), go(_Masked(g, 9))
    assert real.ledger.signature() == masked.ledger.signature()
    assert real.ledger.n_bad == masked.ledger.n_bad


def _phat_from_ledger(ledger, state):
    a, b, out, _ = ledger.log()
    lookup = dict(zip(zip(np.minimum(a, b).tolist(), np.maximum(a, b).tolist()), out.tolist()))
    cand = set(state.candidates.tolist())
    refs = set(state.refs.tolist())
    sums = dict.fromkeys(cand, 0)
    counts = dict.fromkeys(cand, 0)
    for (x, y), o in lookup.items():
        for c, r in ((x, y), (y, x)):
            if c in cand and r in refs:
                sums[c] += o
                counts[c] += 1
    return sums, counts


def test_unconstrained_elimination_invariants(graph_small, params_small):
    out = run_unconstrained(graph_small, params_small.s, 12000, PRACTICAL, 2)
    state = out.trace["elimination"][0]
    sizes = state.active_sizes
    assert all(x >= y for x, y in zip(sizes, sizes[1:]))
    sums, counts = _phat_from_ledger(out.ledger, state)
    phat = state.phat
    for i, c in enumerate(state.candidates.tolist()):
        assert counts[c] == state.nq[i]
        if state.nq[i]:
            assert abs(sums[c] / counts[c] - phat[i]) <= 1e-12
    k, I = out.diagnostics["k"], out.diagnostics["I"]
    assert state.nq.max() <= k * I
    verify_ledger(out.ledger)


def test_unconstrained_step3_stays_inside_A_I(params_small):
    g = sample_csbm(ModelParams(5000, 0.4, 0.1), 3)
    out = run_unconstrained(g, params_small.s, 30000, PRACTICAL, 3)
    marks = out.trace["marks"]
    A_I = set(out.trace["sets"]["A_I"].tolist())
    a, b, _, _ = out.ledger.log()
    within = out.diagnostics["step3_within"]
    lo = marks["step2"]
    for x, y in zip(a[lo : lo + within].tolist(), b[lo : lo + within].tolist()):
        assert x in A_I and y in A_I
    if lo + within < out.ledger.t:
        # fallback only once A_I x A_I is exhausted
        assert within == n_pairs(len(A_I)) or "pair-sampler-starved" in out.diagnostics["flags"]


def test_unconstrained_structural_cap(params_small):
    g = sample_csbm(ModelParams(5000, 0.4, 0.1), 1)
    for T in (3000, 10000, 40000):
        out = run_unconstrained(g, params_small.s, T, PRACTICAL, T)
        assert out.ledger.max_count() <= 17 * math.sqrt(T) + 1


def test_unconstrained_paper_mode_structure():
    params = ModelParams(2000, 0.4, 0.1)
    c = AlgoConstants.paper_unconstrained()
    out = run_unconstrained(sample_csbm(params, 0), params.s, 5000, c, 0)
    assert out.ledger.t == 5000
    assert out.diagnostics["k"] == math.ceil(2200 / params.s)
    verify_ledger(out.ledger)


def test_unconstrained_diagnostics(graph_small, params_small):
    out = run_unconstrained(graph_small, params_small.s, 20000, PRACTICAL, 4)
    d = out.diagnostics
    assert sum(d["regret_by_step"].values()) == out.ledger.n_bad
    assert set(d["regret_by_step"]) >= {"step1", "step2", "step3"}
    assert 0 <= d["kernel_misclassification"] <= 0.5
    assert d["kernel_size"] == unconstrained_sizes(params_small.s, 20000, PRACTICAL)["N"]


# -- screening -------------------------------------------------------------------------


def _screening_setup(seed, n=4000, kernel_size=200):
    g = sample_csbm(ModelParams(n, 0.4, 0.1), seed)
    comm1 = np.flatnonzero(g.labels == 1)
    kernel = np.random.default_rng(seed).choice(comm1, kernel_size, replace=False)
    V = np.setdiff1d(np.arange(n), kernel)
    led = QueryLedger(g, Budget(10**6))
    return g, kernel, V, Run(led, np.arange(n), 10**6, seed)


def test_screening_nu_zero_keeps_everyone():
    g, kernel, V, run = _screening_setup(0)
    sel, rest, st = screening(kernel, 50, 100.0, 0.0, V, run, PRACTICAL, 0.18)
    assert not st.fallback
    assert all(r.active.all() for r in st.rounds)
    assert set(sel.tolist()) <= set(st.A0.tolist())
    assert sel.size == 50 and st.A0.size == 200
    assert np.array_equal(rest, np.setdiff1d(V, st.A0))


def test_screening_impossible_threshold_falls_back():
    g, kernel, V, run = _screening_setup(1)
    sel, _, st = screening(kernel, 50, 100.0, 1.0 + 1e-9, V, run, PRACTICAL, 0.18)
    assert st.fallback and "screening-fallback" in st.flags
    assert all(r.active_sizes[1] == 0 for r in st.rounds)
    assert set(sel.tolist()) <= set(st.A0.tolist()) and sel.size == 50


def test_screening_invariants():
    g, kernel, V, run = _screening_setup(2, kernel_size=400)
    sel, _, st = screening(kernel, 60, 100.0, 0.25, V, run, PRACTICAL, 0.18)
    assert st.m == 400 // (st.k * st.I)
    assert sorted(len(p) for p in st.parts) in ([240 // st.m] * st.m, sorted(len(p) for p in st.parts))
    assert max(len(p) for p in st.parts) - min(len(p) for p in st.parts) <= 1
    per_ref = math.ceil(4 * 60 / st.m)
    a, b, _, _ = run.ledger.log()
    kernel_set = set(kernel.tolist())
    touches = np.bincount(np.r_[a, b], minlength=g.n)
    for r in st.rounds:
        assert r.nq.max() <= st.k * st.I
        assert all(x >= y for x, y in zip(r.active_sizes, r.active_sizes[1:]))
        sums, counts = _phat_from_ledger(run.ledger, r)
        for i, c in enumerate(r.candidates.tolist()):
            if r.nq[i]:
                assert abs(sums[c] / counts[c] - r.phat[i]) <= 1e-12
    assert all(touches[x] <= per_ref for x in kernel_set)
    verify_ledger(run.ledger)


def test_screening_errors():
    g, kernel, V, run = _screening_setup(3, kernel_size=50)
    with pytest.raises(FeasibilityError):
        screening(kernel, 50, 100.0, 0.25, V, run, PRACTICAL, 0.18)  # m = 0
    with pytest.raises(FeasibilityError):
        screening(kernel, 50, 100.0, 0.25, V[:100], run, PRACTICAL, 0.18, allow_short_kernel=True)
    with pytest.raises(InvalidParamsError):
        screening(kernel[:0], 5, 100.0, 0.25, V, run, PRACTICAL, 0.18)


def test_screening_purity_with_exact_kernel():
    fractions = []
    for seed in range(50):
        g, kernel, V, run = _screening_setup(seed)
        sel, _, _ = screening(kernel, 50, 100.0, 0.25, V, run, PRACTICAL, 0.18)
        fractions.append(np.mean(g.labels[sel] == 2))
    assert max(fractions) <= 0.05


# -- constrained -------------------------------------------------------------------------


def test_constrained_schedule():
    sch = constrained_schedule(0.18, 10**5, 100, PRACTICAL)
    B = min(100, math.sqrt(10**5)) / 2
    assert sch["B"] == B
    assert sch["N_init"] == math.ceil(B / math.log(0.18 * B))
    assert sch["N0"] == math.ceil(sch["N_init"] / 2)
    assert sch["growth"] == max(2, math.floor(math.log(0.18 * B)))
    assert sch["sizes"][-1] == min(sch["N0"] * sch["growth"] ** sch["t_f"], math.ceil(10**5 / B))
    assert all(x <= y for x, y in zip(sch["sizes"], sch["sizes"][1:]))


def test_constrained_empty_and_delegation(graph_small, params_small):
    s = params_small.s
    assert run_constrained(graph_small, s, 0, 10, PRACTICAL, 0).ledger.t == 0
    out = run_constrained(graph_small, s, 4000, 17 * 64, PRACTICAL, 0)
    assert "delegated-unconstrained" in out.diagnostics["flags"]
    ref = run_unconstrained(graph_small, s, 4000, PRACTICAL, 0)
    assert out.ledger.signature() == ref.ledger.signature()


@pytest.mark.parametrize("seed", range(4))
def test_constrained_cap_pathwise(params_small, seed):
    g = sample_csbm(params_small, seed)
    T, B_T = 8000, 30
    out = run_constrained(g, params_small.s, T, B_T, PRACTICAL, seed, truncate_supply=True)
    assert out.ledger.t == T
    assert out.ledger.max_count() <= B_T
    verify_ledger(out.ledger)


def test_constrained_supply_error(params_small):
    g = sample_csbm(ModelParams(400, 0.4, 0.1), 0)
    with pytest.raises(FeasibilityError):
        run_constrained(g, params_small.s, 20000, 30, PRACTICAL, 0)


def test_constrained_small_signal(graph_small):
    out = run_constrained(graph_small, 0.01, 3000, 20, PRACTICAL, 0)
    assert "small-signal-random" in out.diagnostics["flags"]
    assert out.ledger.max_count() <= 20


def test_constrained_paper_mode_structure():
    params = ModelParams(4000, 0.4, 0.1)
    out = run_constrained(
        sample_csbm(params, 0), params.s, 3000, 50, AlgoConstants.paper_constrained(), 0, truncate_supply=True
    )
    assert out.ledger.t == 3000 and out.ledger.max_count() <= 50
    verify_ledger(out.ledger)


# -- doubling ------------------------------------------------------------------------------


def test_epochs_layout():
    assert epochs(1) == [(1, 1)]
    assert epochs(8) == [(1, 1), (2, 2), (3, 4), (5, 8)]
    assert epochs(10)[-1] == (9, 10)
    spans = epochs(1000)
    assert sum(last - first + 1 for first, last in spans) == 1000


def test_doubling_single_query(graph_small, params_small):
    out = run_doubling(graph_small, params_small.s, 1, "unconstrained", PRACTICAL, 0)
    assert out.ledger.t == 1


@pytest.mark.parametrize("mode", ["unconstrained", PathwiseCap(0.4), PathwiseCap(0.5, 1.0)])
def test_doubling_epochs_are_node_disjoint(graph_small, params_small, mode):
    out = run_doubling(graph_small, params_small.s, 2000, mode, PRACTICAL, 1, truncate_supply=True)
    windows = [(w["first"], w["last"]) for w in out.trace["epochs"]]
    touched = touched_by_window(out.ledger, windows)
    for i in range(len(touched)):
        for j in range(i + 1, len(touched)):
            assert not touched[i] & touched[j]
    verify_ledger(out.ledger)


def test_pathwise_cap_values():
    cap = PathwiseCap(0.5, 1.0)
    t = np.array([1, 2, 3, 100, 10_000])
    expect = [1, 1, math.ceil(math.sqrt(3) / math.log(3)), math.ceil(10 / math.log(100)), math.ceil(100 / math.log(1e4))]
    assert cap(t).tolist() == expect
    with pytest.raises(InvalidParamsError):
        PathwiseCap(0.6)


def test_doubling_supply_exhaustion_returns_partial():
    params = ModelParams(400, 0.4, 0.1)
    with pytest.raises(FeasibilityError) as info:
        run_doubling(sample_csbm(params, 0), params.s, 40000, "unconstrained", PRACTICAL, 0)
    partial = info.value.partial
    assert partial is not None and 0 < partial.ledger.t < 40000
    verify_ledger(partial.ledger)


# -- s estimation ------------------------------------------------------------------------------


def test_estimate_s_accounting(params_small):
    g = sample_csbm(params_small, 3)
    est = estimate_s(g, None, None, 3)
    s_hat, used, k_hat = est
    assert used == sum(n_pairs(2**k) for k in range(1, k_hat + 1))
    assert est.s_hat_pair_divisor == pytest.approx(s_hat * 2**k_hat / n_pairs(2**k_hat))
    assert est.spectrum.detects


def test_estimate_s_counts_toward_budget(params_small):
    g = sample_csbm(params_small, 4)
    led = QueryLedger(g, Budget(50))
    try:
        est = estimate_s(g, led, None, 0)
        used = est.queries_used
    except NoDetectionError as exc:
        used = exc.queries_used
        assert used == 1 + 6 + 28  # step 4 needs 120 more than the 15 left
    assert used == led.t <= 50
    verify_ledger(led)


def test_estimate_s_skips_empty_steps():
    params = ModelParams(2000, 0.002, 0.001)
    with pytest.raises(NoDetectionError) as info:
        estimate_s(sample_csbm(params, 0), None, 30, 0)
    # steps of 2, 4, 8, 16 nodes fit in 30; step 5 does not
    assert info.value.queries_used == 1 + 6 + 28 + 120


# -- Monte Carlo examples ------------------------------------------------------------------


@pytest.mark.slow
def test_unconstrained_beats_half_random():
    from pairmatch.harness import ExperimentConfig, run_experiment
    from pairmatch.oracle import expected_random_regret

    params = ModelParams(5000, 0.4, 0.1)
    res = run_experiment(ExperimentConfig(params, "unconstrained", PRACTICAL, (40_000, 160_000), replications=100, seed=1))
    assert res.cell(160_000).mean_nbad <= 0.5 * expected_random_regret(params.n, 160_000)


@pytest.mark.slow
def test_constrained_cap_and_regret_at_T_1e5():
    # the node schedule needs 20215 fresh nodes here, so supply truncation is required to run at all
    from pairmatch.harness import CapRule, ExperimentConfig, run_experiment
    from pairmatch.oracle import expected_random_regret

    params = ModelParams(20000, 0.4, 0.1)
    cfg = ExperimentConfig(
        params, "constrained", PRACTICAL, (100_000,), CapRule("fixed", 100), replications=50, seed=1, truncate_supply=True
    )
    cell = run_experiment(cfg).cell(100_000)
    assert cell.max_counts.max() <= 100
    assert cell.mean_nbad <= 0.6 * expected_random_regret(params.n, 100_000)
