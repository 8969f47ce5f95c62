"""Latency estimates from traces, exact-vs-simulated comparisons and sweeps."""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field
from typing import Any, Sequence

import numpy as np

from lockfree_markov.binsgame import BinsConfig, run_bins
from lockfree_markov.markov import ChainError, event_rate, stationary
from lockfree_markov.models import (
    FAI_GLOBAL_MAX_N,
    PARALLEL_SYSTEM_MAX_STATES,
    SCU_SYSTEM_MAX_N,
    build_fai_global,
    build_parallel_system,
    build_scu_system,
)
from lockfree_markov.simulator import (
    ScuProgram,
    SchedulerSpec,
    Trace,
    run_fai,
    run_parallel,
    run_scu,
)

MIN_SUCCESSES = 100
BATCHES = 30
MODELS = ("scu", "fai", "parallel")


class TooFewSuccesses(ValueError):
    pass


def default_warmup(n: int, q: int = 0, s: int = 1) -> int:
    return 10 * n * (q + s + 1)


def batch_means_se(samples: np.ndarray, batches: int = BATCHES) -> float:
    """Standard error of the mean from non-overlapping batch means."""
    k = len(samples) // batches
    if k < 1:
        return math.nan
    means = samples[: k * batches].reshape(batches, k).mean(axis=1)
    return float(means.std(ddof=1) / math.sqrt(batches))


@dataclass
class LatencyReport:
    n: int
    steps_measured: int
    warmup: int
    successes: int
    W: float
    W_se: float
    W_i: np.ndarray
    W_i_se: np.ndarray
    own_steps: np.ndarray
    completions: np.ndarray
    completion_rate: float
    mu: float

    @property
    def Wi_min(self) -> float:
        return float(np.nanmin(self.W_i))

    @property
    def Wi_max(self) -> float:
        return float(np.nanmax(self.W_i))

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        for key in ("W_i", "W_i_se", "own_steps", "completions"):
            d[key] = [None if isinstance(x, float) and math.isnan(x) else x for x in np.asarray(d[key]).tolist()]
        return d


def estimate_latencies(trace: Trace, warmup: int | None = None) -> LatencyReport:
    """System and per-process latency in system steps, after discarding
    ``warmup`` initial steps (default ``10*n*(q+s+1)``).

    ``own_steps`` is the individual latency measured in the process's own
    steps. Processes with fewer than two completions get NaN.
    """
    q = trace.params.get("q", 0) or 0
    s = trace.params.get("s", 1) or 1
    if warmup is None:
        warmup = default_warmup(trace.n, q, s)
    if warmup >= trace.steps:
        raise TooFewSuccesses(f"warm-up of {warmup} steps leaves nothing of a {trace.steps}-step run")
    succ = trace.success_steps
    succ = succ[succ >= warmup]
    if len(succ) < MIN_SUCCESSES:
        raise TooFewSuccesses(
            f"only {len(succ)} successes after warm-up; need at least {MIN_SUCCESSES}, run longer"
        )
    gaps = np.diff(succ).astype(float)
    who = trace.step_success[succ]
    measured = trace.steps - warmup
    share = np.bincount(trace.schedule[warmup:], minlength=trace.n) / measured

    W_i = np.full(trace.n, math.nan)
    W_i_se = np.full(trace.n, math.nan)
    counts = np.bincount(who, minlength=trace.n)
    for p in range(trace.n):
        mine = succ[who == p]
        if len(mine) >= 2:
            g = np.diff(mine).astype(float)
            W_i[p] = g.mean()
            W_i_se[p] = batch_means_se(g)
    rate = len(succ) / measured
    return LatencyReport(
        n=trace.n,
        steps_measured=measured,
        warmup=warmup,
        successes=len(succ),
        W=float(gaps.mean()),
        W_se=batch_means_se(gaps),
        W_i=W_i,
        W_i_se=W_i_se,
        own_steps=W_i * share,
        completions=counts,
        completion_rate=rate,
        mu=rate,
    )


def exact_system_latency(model: str, n: int, q: int = 0, s: int = 1) -> float:
    """Exact W from the system chain of the model."""
    if model == "scu":
        if (q, s) != (0, 1):
            raise ChainError("exact SCU chains exist only for q=0, s=1")
        if n > SCU_SYSTEM_MAX_N:
            raise ChainError(f"n={n} exceeds the SCU system-chain cap {SCU_SYSTEM_MAX_N}")
        chain = build_scu_system(n)
    elif model == "fai":
        if n > FAI_GLOBAL_MAX_N:
            raise ChainError(f"n={n} exceeds the FAI chain cap {FAI_GLOBAL_MAX_N}")
        chain = build_fai_global(n)
    elif model == "parallel":
        if q < 1:
            raise ChainError("parallel code needs q >= 1")
        if math.comb(n + q - 1, q - 1) > PARALLEL_SYSTEM_MAX_STATES:
            raise ChainError("parallel system chain exceeds the state cap")
        chain = build_parallel_system(n, q)
    else:
        raise ValueError(f"unknown model {model!r}")
    return event_rate(chain, stationary(chain)).latency


def simulate(model: str, n: int, q: int, s: int, steps: int, seed: int, sched: SchedulerSpec | None = None) -> Trace:
    if model == "scu":
        return run_scu(ScuProgram(q, s), n, steps, seed, sched)
    if model == "parallel":
        return run_parallel(n, q, steps, seed, sched)
    if model == "fai":
        return run_fai(n, steps, seed, sched)
    raise ValueError(f"unknown model {model!r}")


@dataclass
class ComparisonReport:
    model: str
    n: int
    q: int
    s: int
    W_exact: float
    W_emp: float
    W_rel_err: float
    Wi_exact: float
    Wi_emp: list[float]
    Wi_rel_err: list[float]

    @property
    def max_rel_err(self) -> float:
        return max([self.W_rel_err, *self.Wi_rel_err])


def compare_exact_vs_sim(model: str, n: int, q: int = 0, s: int = 1, steps: int = 10**7, seed: int = 0) -> ComparisonReport:
    """Relative error of simulated W and W_i against the exact chain.
    The exact individual latency is ``n * W``."""
    exact = exact_system_latency(model, n, q, s)
    rep = estimate_latencies(simulate(model, n, q, s, steps, seed))
    wi_exact = n * exact
    return ComparisonReport(
        model=model, n=n, q=q, s=s,
        W_exact=exact,
        W_emp=rep.W,
        W_rel_err=abs(rep.W - exact) / exact,
        Wi_exact=wi_exact,
        Wi_emp=rep.W_i.tolist(),
        Wi_rel_err=(np.abs(rep.W_i - wi_exact) / wi_exact).tolist(),
    )


@dataclass
class SweepRow:
    n: int
    q: int
    s: int
    W: float
    W_over_sqrt_n: float
    completion_rate: float
    source: str
    k_correct: int | None = None


@dataclass
class SweepResult:
    model: str
    mode: str
    rows: list[SweepRow]
    gamma: float | None
    C: float | None
    fit_target: str
    fit_n: list[int]
    partial: bool = False
    notes: list[str] = field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        return {
            "model": self.model,
            "mode": self.mode,
            "rows": [asdict(r) for r in self.rows],
            "fit": {"gamma": self.gamma, "C": self.C, "target": self.fit_target, "n": self.fit_n},
            "partial": self.partial,
            "notes": self.notes,
        }


def point_seed(seed: int, n: int) -> int:
    """Seed for one sweep point; depends only on the sweep seed and n."""
    return seed * 1_000_003 + n


def fit_exponent(n: Sequence[int], y: Sequence[float]) -> tuple[float, float]:
    """Least-squares fit of y = C * n**gamma on log-log axes."""
    x = np.log(np.asarray(n, dtype=float))
    ly = np.log(np.asarray(y, dtype=float))
    if len(x) < 2:
        raise ValueError("need at least two points to fit an exponent")
    gamma, logc = np.polyfit(x, ly, 1)
    return float(gamma), float(math.exp(logc))


def _sweep_point(model, mode, n, q, s, budget, seed) -> SweepRow:
    if mode == "exact":
        W = exact_system_latency(model, n, q, s)
        rate = 1.0 / W
    elif mode == "sim":
        rep = estimate_latencies(simulate(model, n, q, s, budget, point_seed(seed, n)))
        W, rate = rep.W, rep.completion_rate
    elif mode == "bins":
        if model != "scu" or (q, s) != (0, 1):
            raise ValueError("bins mode models SCU with q=0, s=1 only")
        log = run_bins(BinsConfig(n, budget, point_seed(seed, n)))
        W = float(log.length.mean())
        rate = len(log) / log.total_steps
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return SweepRow(n, q, s, W, W / math.sqrt(n), rate, mode)


def sweep(
    model: str,
    n_list: Sequence[int],
    q: int = 0,
    s: int = 1,
    mode: str = "exact",
    budget: int = 10**6,
    seed: int = 0,
    time_limit: float | None = None,
) -> SweepResult:
    """One row per n, then a log-log fit over the largest half of n_list.

    For SCU and FAI the fit is of ``W - q``; parallel code has ``W = q``
    exactly, so ``W`` itself is fitted. ``budget`` is steps per point in sim
    mode and phases per point in bins mode. Points are skipped once
    ``time_limit`` seconds have elapsed, and the result is marked partial.
    """
    n_list = [int(x) for x in n_list]
    if not n_list:
        raise ValueError("empty n list")
    if n_list != sorted(n_list):
        raise ValueError("n list must be sorted ascending")
    if model == "fai" and mode == "bins":
        raise ValueError("bins mode models SCU only")
    started = time.monotonic()
    rows: list[SweepRow] = []
    partial = False
    for n in n_list:
        if time_limit is not None and time.monotonic() - started > time_limit:
            partial = True
            break
        rows.append(_sweep_point(model, mode, n, q, s, budget, seed))

    fit_target = "W" if model == "parallel" else "W-q"
    notes = []
    half = rows[len(rows) // 2:]
    ys = [r.W if fit_target == "W" else r.W - r.q for r in half]
    gamma = C = None
    if len(half) >= 2 and all(y > 0 for y in ys):
        gamma, C = fit_exponent([r.n for r in half], ys)
    else:
        notes.append("exponent not fitted: fewer than two positive points")
    if partial:
        notes.append(f"time limit reached after {len(rows)} of {len(n_list)} points")
    return SweepResult(model, mode, rows, gamma, C, fit_target, [r.n for r in half], partial, notes)


def rate_curve(rows: Sequence[SweepRow]) -> np.ndarray:
    """Columns n, rate, C/sqrt(n) scaled to the first point, 1/n."""
    n = np.array([r.n for r in rows], dtype=float)
    rate = np.array([r.completion_rate for r in rows])
    scaled = rate[0] * math.sqrt(n[0]) / np.sqrt(n)
    return np.column_stack([n, rate, scaled, 1.0 / n])


def crash_sweep(
    n: int, k_correct: int, q: int = 0, s: int = 1, steps: int = 10**7, seed: int = 0, model: str = "scu"
) -> SweepRow:
    """Latency with processes k_correct..n-1 crashed at step 0."""
    if not 1 <= k_correct <= n:
        raise ValueError("need 1 <= k_correct <= n")
    spec = SchedulerSpec(kind="uniform-with-crashes", crash_times={p: 0 for p in range(k_correct, n)})
    trace = simulate(model, n, q, s, steps, seed, spec)
    rep = estimate_latencies(trace)
    return SweepRow(n, q, s, rep.W, rep.W / math.sqrt(n), rep.completion_rate, "sim", k_correct)
