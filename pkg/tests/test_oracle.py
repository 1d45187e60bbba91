from __future__ import annotations

import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pairmatch import Budget, ModelParams, QueryLedger, expected_random_regret, sample_csbm, verify_ledger
from pairmatch.errors import BudgetExhausted, InvalidPairError, InvariantViolation, NRViolation, SpSViolation
from pairmatch.oracle import dump_ledger_csv, n_pairs, occurrence_rank, pair_from_index, regret_report
from pairmatch.strategies import run_random


def test_balanced_labels():
    for seed in range(20):
        g = sample_csbm(ModelParams(4, 0.4, 0.1), seed)
        assert sorted(g.labels.tolist()) == [1, 1, 2, 2]
    g = sample_csbm(ModelParams(1000, 0.4, 0.1), 3)
    assert np.count_nonzero(g.labels == 1) == 500


def test_sample_is_deterministic():
    params = ModelParams(500, 0.3, 0.05)
    g1, g2 = sample_csbm(params, 99), sample_csbm(params, 99)
    a, b = pair_from_index(np.arange(n_pairs(500)), 500)
    assert np.array_equal(g1.labels, g2.labels)
    assert np.array_equal(g1.adjacency(a, b), g2.adjacency(a, b))
    assert not np.array_equal(g1.adjacency(a, b), sample_csbm(params, 100).adjacency(a, b))


def test_adjacency_symmetric():
    g = sample_csbm(ModelParams(300, 0.4, 0.1), 1)
    a, b = pair_from_index(np.arange(n_pairs(300)), 300)
    assert np.array_equal(g.adjacency(a, b), g.adjacency(b, a))


def test_tiny_q_between_frequency():
    # n = 2000 has exactly 10^6 between-community pairs
    g = sample_csbm(ModelParams(2000, 0.5, 1e-9), 5)
    one, two = np.flatnonzero(g.labels == 1), np.flatnonzero(g.labels == 2)
    a, b = np.repeat(one, two.size), np.tile(two, one.size)
    assert a.size == 10**6
    assert g.adjacency(a, b).mean() <= 1e-6


def test_within_frequency():
    p = 0.3
    g = sample_csbm(ModelParams(2000, p, 0.05), 8)
    one = np.flatnonzero(g.labels == 1)
    iu, ju = np.triu_indices(one.size, k=1)
    a, b = one[iu[:100_000]], one[ju[:100_000]]
    led = QueryLedger(g, Budget(100_000))
    freq = led.query_batch(a, b).mean()
    assert abs(freq - p) <= 3 * math.sqrt(p / 100_000)


def test_query_errors():
    g = sample_csbm(ModelParams(10, 0.4, 0.1), 0)
    led = QueryLedger(g, Budget(5, 1))
    led.query(0, 1)
    with pytest.raises(NRViolation):
        led.query(1, 0)
    with pytest.raises(SpSViolation):
        led.query(0, 2)
    with pytest.raises(InvalidPairError):
        led.query(3, 3)
    with pytest.raises(InvalidPairError):
        led.query(3, 10)
    led.query(2, 3)
    led.query(4, 5)
    led.query(6, 7)
    led.query(8, 9)
    with pytest.raises(BudgetExhausted):
        led.query(2, 9)


def test_batch_is_atomic():
    g = sample_csbm(ModelParams(10, 0.4, 0.1), 0)
    led = QueryLedger(g, Budget(10, 2))
    led.query(0, 1)
    with pytest.raises(NRViolation):
        led.query_batch([2, 0], [3, 1])
    with pytest.raises(SpSViolation):
        led.query_batch([0, 0, 5], [2, 3, 6])
    with pytest.raises(NRViolation):
        led.query_batch([4, 5], [5, 4])
    assert led.t == 1 and led.counts.sum() == 2
    verify_ledger(led)


def test_pathwise_cap_schedule():
    g = sample_csbm(ModelParams(10, 0.4, 0.1), 0)
    led = QueryLedger(g, Budget(10, 9), cap_schedule=lambda t: np.where(np.asarray(t) < 3, 1, 2))
    led.query(0, 1)
    with pytest.raises(SpSViolation):
        led.query(0, 2)  # t = 2 still has cap 1
    led.query(2, 3)
    led.query(0, 2)  # t = 3 allows a second query
    verify_ledger(led)


def test_cap_change_history_checked():
    g = sample_csbm(ModelParams(10, 0.4, 0.1), 0)
    led = QueryLedger(g, Budget(10, 3))
    led.query_batch([0, 0], [1, 2])
    led.cap = 1
    with pytest.raises(SpSViolation):
        led.query(0, 3)
    led.query(4, 5)
    verify_ledger(led)
    assert led.cap_history == [(0, 3), (2, 1)]


def test_handshake_after_random_run():
    g = sample_csbm(ModelParams(6, 0.4, 0.1), 4)
    out = run_random(g, Budget(10), 1)
    assert out.ledger.counts.sum() == 2 * out.ledger.t == 20
    verify_ledger(out.ledger)


def test_expected_random_regret_examples():
    assert expected_random_regret(6, 10) == pytest.approx(6.0)
    assert expected_random_regret(4, 6) == pytest.approx(4.0)
    assert expected_random_regret(200, 0) == 0.0
    with pytest.raises(BudgetExhausted):
        expected_random_regret(6, 16)


def test_exhaustive_census_matches_oracle():
    g = sample_csbm(ModelParams(4, 0.4, 0.1), 0)
    out = run_random(g, Budget(6), 0)
    assert out.ledger.n_bad == expected_random_regret(4, 6)


def test_verify_ledger_detects_tampering():
    g = sample_csbm(ModelParams(50, 0.4, 0.1), 0)
    out = run_random(g, Budget(100), 0)
    led = out.ledger
    verify_ledger(led)
    led.n_bad += 1
    with pytest.raises(InvariantViolation):
        verify_ledger(led)
    led.n_bad -= 1
    led.counts[0] += 1
    with pytest.raises(InvariantViolation):
        verify_ledger(led)


def test_outcomes_rederive_from_pair_seeds():
    g = sample_csbm(ModelParams(200, 0.4, 0.1), 2)
    led = run_random(g, Budget(2000), 3).ledger
    a, b, out, _ = led.log()
    assert np.array_equal(g.adjacency(a, b), out)
    assert all(led.outcome(int(x), int(y)) == int(o) for x, y, o in zip(a[:50], b[:50], out[:50]))


def test_regret_report():
    params = ModelParams(200, 0.4, 0.1)
    led = run_random(sample_csbm(params, 0), Budget(3000), 0).ledger
    rep = regret_report(led, params)
    assert rep.regret == pytest.approx((params.p - params.q) * led.n_bad)
    traj = rep.trajectory
    assert traj.shape[1] == 3 and len(traj) <= 1024
    assert np.all(np.diff(traj, axis=0) >= 0)
    assert traj[-1, 0] == 3000 and traj[-1, 1] == led.n_bad


def test_dump_ledger_csv(tmp_path):
    g = sample_csbm(ModelParams(20, 0.4, 0.1), 0)
    led = run_random(g, Budget(30), 0).ledger
    path = tmp_path / "ledger.csv"
    dump_ledger_csv(led, path)
    rows = list(csv.reader(path.open()))
    assert rows[0] == ["t", "node_a", "node_b", "outcome", "is_bad"]
    assert len(rows) == 31
    assert sum(int(r[4]) for r in rows[1:]) == led.n_bad


@settings(max_examples=200)
@given(st.integers(min_value=2, max_value=300), st.data())
def test_pair_from_index_bijective(n, data):
    k = data.draw(st.integers(min_value=0, max_value=n_pairs(n) - 1))
    a, b = pair_from_index(np.array([k]), n)
    assert 0 <= a[0] < b[0] < n
    assert a[0] * n - a[0] * (a[0] + 1) // 2 + (b[0] - a[0] - 1) == k


def test_occurrence_rank():
    assert occurrence_rank(np.array([3, 1, 3, 3, 1])).tolist() == [1, 1, 2, 3, 2]
