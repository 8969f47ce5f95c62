from __future__ import annotations

import json
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lockfree_markov import (
    Chain,
    ChainError,
    Distribution,
    ergodic_flow,
    event_rate,
    expected_hitting_time,
    expected_return_time,
    is_ergodic,
    is_irreducible,
    period,
    stationary,
    validate,
)
from lockfree_markov.markov import event_successor_distribution, sample_event_gaps
from lockfree_markov.models import build_fai_global, build_parallel_system, build_scu_system

from oracles import exact_hitting, exact_stationary, scu_system_exact

F = Fraction


def self_loop():
    return Chain.from_edges(1, [(0, 0, 1)])


def cycle(k):
    return Chain.from_edges(k, [(i, (i + 1) % k, 1) for i in range(k)])


def lazy_pair():
    return Chain.from_edges(2, [(0, 0, F(1, 2)), (0, 1, F(1, 2)), (1, 0, F(1, 2)), (1, 1, F(1, 2))])


# -- construction and validation --------------------------------------------

def test_self_loop_is_valid():
    assert validate(self_loop()).ok


def test_row_sum_violation_reported():
    c = Chain.from_edges(2, [(0, 1, F(9, 10)), (1, 0, 1)])
    report = validate(c)
    assert not report.ok
    assert report.row_sum_violations == [(0, F(9, 10))]


def test_scu_system_n4_valid():
    assert validate(build_scu_system(4)).ok


def test_rejects_bad_edges():
    with pytest.raises(ChainError):
        Chain.from_edges(2, [(0, 2, 1)])
    with pytest.raises(ChainError):
        Chain.from_edges(2, [(0, 1, 1), (1, 0, 1)], event_edges=[(0, 0)])


def test_duplicate_edges_merge():
    c = Chain.from_edges(1, [(0, 0, F(1, 2)), (0, 0, F(1, 2))])
    assert c.num_edges == 1
    assert c.probability(0, 0) == 1


def test_distribution_validation():
    Distribution(np.array([0.25, 0.75]))
    with pytest.raises(ChainError):
        Distribution(np.array([0.5, 0.6]))
    with pytest.raises(ChainError):
        Distribution(np.array([-0.1, 1.1]))


def test_json_roundtrip():
    c = build_scu_system(3)
    data = json.loads(json.dumps(c.to_dict()))
    back = Chain.from_dict(data)
    assert back.transitions == c.transitions
    assert back.event_edges == c.event_edges
    assert back.labels == c.labels


def test_dot_export_marks_events():
    dot = build_scu_system(2).to_dot()
    assert dot.startswith("digraph")
    assert dot.count("red") == 3
    with pytest.raises(ChainError):
        build_fai_global(500).to_dot()


# -- structure --------------------------------------------------------------

def test_ergodicity_small_cases():
    assert is_ergodic(self_loop())
    assert not is_ergodic(cycle(2))
    assert period(cycle(2)) == 2
    assert is_irreducible(cycle(2))


def test_reducible_chain():
    c = Chain.from_edges(2, [(0, 0, 1), (1, 0, 1)])
    assert not is_irreducible(c)
    with pytest.raises(ChainError, match="stationary undefined"):
        stationary(c)


@pytest.mark.parametrize("n", range(1, 7))
def test_scu_system_is_irreducible_with_period_two(n):
    c = build_scu_system(n)
    assert is_irreducible(c)
    # every step flips the parity of the total ball count (reads + old CAS)
    assert period(c) == 2
    assert not is_ergodic(c)


def test_fai_global_is_ergodic():
    for n in (1, 2, 5, 30):
        assert is_ergodic(build_fai_global(n))


# -- stationary distribution ------------------------------------------------

def test_stationary_trivial():
    assert stationary(self_loop()).probabilities.tolist() == [1.0]
    np.testing.assert_allclose(stationary(lazy_pair()).probabilities, [0.5, 0.5], atol=1e-15)


def test_scu_system_n2_stationary_matches_exact_oracle():
    c = build_scu_system(2)
    pi = stationary(c).probabilities
    expected = {(2, 0): F(1, 4), (1, 0): F(3, 10), (0, 0): F(3, 20), (1, 1): F(1, 5), (0, 1): F(1, 10)}
    for label, value in expected.items():
        assert pi[c.index_of(label)] == pytest.approx(float(value), abs=1e-12)


@pytest.mark.parametrize("n", [2, 3, 4])
def test_scu_system_stationary_against_brute_force_aggregate(n):
    coarse, Q, _ = scu_system_exact(n)
    exact = exact_stationary(len(coarse), Q)
    c = build_scu_system(n)
    assert [tuple(x) for x in c.labels] == coarse
    np.testing.assert_allclose(stationary(c).probabilities, [float(x) for x in exact], atol=1e-12)


def test_iterative_path_agrees_with_dense():
    # n=64 has 2144 states, above the dense limit
    c = build_scu_system(64)
    assert c.num_states > 2000
    pi = stationary(c).probabilities
    resid = np.abs(pi @ c.matrix.toarray() - pi).max()
    assert resid < 1e-10


# -- hitting and return times -----------------------------------------------

def test_return_time_trivial():
    assert expected_return_time(self_loop(), 0) == 1.0
    assert expected_hitting_time(self_loop(), 0, 0) == 1.0


def test_return_time_scu_n2():
    c = build_scu_system(2)
    assert expected_return_time(c, c.index_of((0, 0))) == pytest.approx(20 / 3, abs=1e-9)
    assert expected_hitting_time(c, c.index_of((0, 0)), c.index_of((0, 0))) == pytest.approx(20 / 3, abs=1e-9)


def test_cycle_hitting_time():
    assert expected_hitting_time(cycle(3), 0, 1) == pytest.approx(1.0)
    assert expected_hitting_time(cycle(3), 0, 2) == pytest.approx(2.0)


def test_unreachable_target():
    c = Chain.from_edges(2, [(0, 0, 1), (1, 0, 1)])
    with pytest.raises(ChainError, match="infinite hitting time"):
        expected_hitting_time(c, 0, 1)


@pytest.mark.parametrize("n", [3, 4])
def test_hitting_times_against_exact_oracle(n):
    coarse, Q, _ = scu_system_exact(n)
    c = build_scu_system(n)
    target = 0
    h = exact_hitting(len(coarse), Q, target)
    for i in range(len(coarse)):
        assert expected_hitting_time(c, i, target) == pytest.approx(float(h[i]), rel=1e-10)


# -- flows and event rates --------------------------------------------------

def test_flow_single_state():
    q = ergodic_flow(self_loop(), stationary(self_loop()))
    assert q.as_dict() == {(0, 0): 1.0}


def test_flow_scu_n2():
    c = build_scu_system(2)
    q = ergodic_flow(c, stationary(c))
    assert q[c.index_of((1, 1)), c.index_of((2, 0))] == pytest.approx(0.1, abs=1e-12)


def test_event_rate_examples():
    everything = Chain.from_edges(2, [(0, 1, 1), (1, 0, 1)], event_edges=[(0, 1), (1, 0)])
    r = event_rate(everything, stationary(everything))
    assert (r.mu, r.latency) == (pytest.approx(1.0), pytest.approx(1.0))

    c = build_scu_system(2)
    r = event_rate(c, stationary(c))
    assert r.mu == pytest.approx(7 / 20, abs=1e-12)
    assert r.latency == pytest.approx(20 / 7, abs=1e-12)

    with pytest.raises(ChainError):
        event_rate(self_loop(), stationary(self_loop()))


@pytest.mark.parametrize("n,q", [(2, 2), (3, 4), (5, 3)])
def test_parallel_system_latency_is_q(n, q):
    c = build_parallel_system(n, q)
    assert event_rate(c, stationary(c)).latency == pytest.approx(q, abs=1e-9)


def test_event_successor_distribution_scu_n2():
    c = build_scu_system(2)
    succ = event_successor_distribution(c, stationary(c))
    # a success from (a, b) lands in (a+1, n-a-1)
    labels = {c.labels[i]: p for i, p in enumerate(succ) if p > 0}
    assert set(labels) == {(2, 0), (1, 1)}
    assert sum(labels.values()) == pytest.approx(1.0)


def test_walk_gaps_match_latency():
    c = build_scu_system(4)
    gaps = sample_event_gaps(c, 10**7, seed=11)
    exact = event_rate(c, stationary(c)).latency
    assert gaps.mean() == pytest.approx(exact, rel=0.02)


# -- properties on random chains --------------------------------------------

@st.composite
def random_chains(draw):
    k = draw(st.integers(1, 7))
    rows = []
    for i in range(k):
        # a self-loop keeps the chain aperiodic; a ring edge keeps it irreducible
        weights = draw(st.lists(st.integers(0, 5), min_size=k, max_size=k))
        weights[i] += 1
        weights[(i + 1) % k] += 1
        rows.append(weights)
    edges = []
    for i, w in enumerate(rows):
        total = sum(w)
        edges += [(i, j, F(x, total)) for j, x in enumerate(w) if x]
    return Chain.from_edges(k, edges)


@settings(max_examples=60, deadline=None)
@given(random_chains())
def test_random_chain_invariants(chain):
    assert validate(chain).ok
    assert is_ergodic(chain)
    pi = stationary(chain).probabilities
    P = chain.matrix.toarray()
    np.testing.assert_allclose(P.sum(axis=1), 1.0, atol=1e-12)
    assert np.abs(pi @ P - pi).max() < 1e-10
    for j in range(chain.num_states):
        assert pi[j] * expected_return_time(chain, j) == pytest.approx(1.0, abs=1e-9)
    q = ergodic_flow(chain, pi)
    np.testing.assert_allclose(q.inflow(), q.outflow(), atol=1e-9)
    np.testing.assert_allclose(q.outflow(), pi, atol=1e-9)
    assert q.total == pytest.approx(1.0, abs=1e-9)


@settings(max_examples=40, deadline=None)
@given(random_chains())
def test_random_chain_matches_exact_stationary(chain):
    exact = exact_stationary(chain.num_states, chain.transitions)
    np.testing.assert_allclose(stationary(chain).probabilities, [float(x) for x in exact], atol=1e-12)
