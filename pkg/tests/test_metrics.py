from __future__ import annotations

import math

import numpy as np
import pytest

from lockfree_markov.metrics import (
    TooFewSuccesses,
    batch_means_se,
    compare_exact_vs_sim,
    crash_sweep,
    estimate_latencies,
    exact_system_latency,
    fit_exponent,
    rate_curve,
    sweep,
)
from lockfree_markov.simulator import ScuProgram, run_parallel, run_scu


def test_solo_latency_exact():
    rep = estimate_latencies(run_scu(ScuProgram(0, 1), 1, 10000, seed=0))
    assert rep.W == 2.0
    assert rep.W_i.tolist() == [2.0]
    assert rep.own_steps.tolist() == [2.0]


def test_too_few_successes():
    with pytest.raises(TooFewSuccesses):
        estimate_latencies(run_scu(ScuProgram(0, 1), 4, 300, seed=0))


def test_scu_n2_latencies():
    rep = estimate_latencies(run_scu(ScuProgram(0, 1), 2, 10**7, seed=31))
    assert rep.W == pytest.approx(20 / 7, rel=0.02)
    np.testing.assert_allclose(rep.W_i, 40 / 7, rtol=0.03)


def test_parallel_latencies():
    rep = estimate_latencies(run_parallel(3, 4, 10**7, seed=32))
    assert rep.W == pytest.approx(4, rel=0.02)
    np.testing.assert_allclose(rep.W_i, 12, rtol=0.03)


def test_rate_is_inverse_latency():
    rep = estimate_latencies(run_scu(ScuProgram(1, 2), 6, 10**6, seed=33))
    assert abs(1 / rep.W - rep.completion_rate) < 3 * rep.W_se / rep.W**2 + 1e-4
    assert rep.mu == rep.completion_rate


def test_fairness_and_latency_relation():
    for n in (4, 8):
        rep = estimate_latencies(run_scu(ScuProgram(0, 1), n, 10**7, seed=40 + n))
        assert rep.completions.min() >= 10**4
        assert rep.Wi_max / rep.Wi_min <= 1.1
        ratio = rep.W_i / (n * rep.W)
        assert np.all((ratio >= 0.97) & (ratio <= 1.03))


@pytest.mark.parametrize("model,n,q,s", [("scu", 4, 0, 1), ("fai", 8, 0, 0), ("parallel", 3, 2, 0)])
def test_exact_vs_sim(model, n, q, s):
    rep = compare_exact_vs_sim(model, n, q, s, steps=10**7, seed=7)
    assert rep.W_rel_err < 0.02
    assert max(rep.Wi_rel_err) < 0.03


def test_exact_latency_caps():
    with pytest.raises(ValueError):
        exact_system_latency("scu", 4, q=2)
    with pytest.raises(ValueError):
        exact_system_latency("scu", 10**5)


def test_batch_means_constant_series():
    assert batch_means_se(np.ones(3000)) == 0.0
    assert math.isnan(batch_means_se(np.ones(10)))


def test_fit_exponent_recovers_power_law():
    n = [16, 64, 256, 1024]
    gamma, c = fit_exponent(n, [3 * x**0.5 for x in n])
    assert gamma == pytest.approx(0.5)
    assert c == pytest.approx(3.0)


def test_parallel_exact_sweep():
    res = sweep("parallel", list(range(2, 33)), q=5, mode="exact")
    assert all(r.W == pytest.approx(5, abs=1e-9) for r in res.rows)
    assert abs(res.gamma) < 1e-6
    assert res.fit_target == "W"


def test_bins_sweep_exponent():
    res = sweep("scu", [2**k for k in range(6, 15, 2)], mode="bins", budget=10**4, seed=7)
    assert 0.4 <= res.gamma <= 0.6
    assert res.fit_n == [1024, 4096, 16384]


def test_sweep_validation_and_partial():
    with pytest.raises(ValueError):
        sweep("scu", [8, 4])
    res = sweep("scu", [4, 8, 16], mode="exact", time_limit=-1)
    assert res.partial and res.rows == []


def test_sweep_reproducible():
    a = sweep("scu", [4, 16], mode="sim", budget=10**5, seed=3)
    b = sweep("scu", [4, 16], mode="sim", budget=10**5, seed=3)
    assert a.to_dict() == b.to_dict()


def test_rate_curve_columns():
    res = sweep("scu", [4, 16, 64], mode="exact")
    curve = rate_curve(res.rows)
    assert curve[:, 0].tolist() == [4, 16, 64]
    assert curve[0, 2] == curve[0, 1]
    assert curve[1, 2] == pytest.approx(curve[0, 1] / 2)
    assert curve[:, 3].tolist() == [0.25, 1 / 16, 1 / 64]


def test_crash_sweep_all_correct_matches_plain_run():
    row = crash_sweep(8, 8, steps=10**6, seed=9)
    plain = estimate_latencies(run_scu(ScuProgram(0, 1), 8, 10**6, seed=9))
    assert row.W == plain.W


def test_crash_sweep_two_correct():
    row = crash_sweep(8, 2, steps=10**7, seed=10)
    assert row.W == pytest.approx(20 / 7, rel=0.03)
    assert row.k_correct == 2


def test_crash_sweep_four_of_sixteen():
    row = crash_sweep(16, 4, steps=10**7, seed=11)
    assert row.W == pytest.approx(exact_system_latency("scu", 4), rel=0.05)


def test_preamble_is_additive_for_a_single_process():
    for q in (0, 3, 10):
        rep = estimate_latencies(run_scu(ScuProgram(q, 1), 1, 10**5, seed=0))
        assert rep.W == q + 2


def test_preamble_adds_at_most_q_under_contention():
    # processes in their preamble do not contend, so the loop gets cheaper
    n = 64
    w = {q: estimate_latencies(run_scu(ScuProgram(q, 1), n, 2 * 10**6, seed=50 + q)).W for q in (0, 4, 16)}
    for q in (4, 16):
        assert q + 2 <= w[q] <= w[0] + q
        assert w[q] > w[0]
