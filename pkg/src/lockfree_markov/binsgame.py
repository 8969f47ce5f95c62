"""Iterated balls-into-bins game.

Every bin starts with one ball. Each step throws a ball into a uniform bin.
When a bin reaches three balls the phase ends: that bin goes back to one
ball and every bin holding two balls is emptied.

Reading one ball as Read, two as CCAS and zero as OldCAS, the game is the
SCU(0, 1) system chain and a phase is the gap between two successes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Iterator

import numpy as np

from lockfree_markov import _kernels
from lockfree_markov.markov import ChainError, event_rate, event_successor_distribution, stationary
from lockfree_markov.models import SCU_SYSTEM_MAX_N, build_scu_system


@dataclass(frozen=True)
class BinsConfig:
    n: int
    phases: int
    seed: int
    alpha: float = 4.0
    c: float = 10.0

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("need at least one bin")
        if self.phases < 1:
            raise ValueError("need at least one phase")
        if self.alpha < 4:
            raise ValueError("alpha must be at least 4")
        if self.c < 10:
            raise ValueError("c must be at least 10")


@dataclass(frozen=True)
class PhaseRecord:
    a_start: int
    b_start: int
    length: int
    range: int


def classify_range(a: int | np.ndarray, n: int, c: float = 10.0):
    """1 if a >= n/3, 2 if n/c <= a < n/3, else 3. Exact for integer a."""
    a = np.asarray(a)
    out = np.where(3 * a >= n, 1, np.where(c * a >= n, 2, 3))
    return int(out) if out.ndim == 0 else out.astype(np.int8)


class PhaseLog:
    """Column-oriented sequence of phase records."""

    def __init__(self, n: int, a_start: np.ndarray, b_start: np.ndarray, length: np.ndarray, c: float = 10.0):
        self.n = n
        self.c = c
        self.a_start = np.asarray(a_start, dtype=np.int64)
        self.b_start = np.asarray(b_start, dtype=np.int64)
        self.length = np.asarray(length, dtype=np.int64)
        self.range = classify_range(self.a_start, n, c)

    def __len__(self) -> int:
        return len(self.length)

    def __getitem__(self, i: int) -> PhaseRecord:
        return PhaseRecord(int(self.a_start[i]), int(self.b_start[i]), int(self.length[i]), int(self.range[i]))

    def __iter__(self) -> Iterator[PhaseRecord]:
        return (self[i] for i in range(len(self)))

    @property
    def total_steps(self) -> int:
        return int(self.length.sum())


def run_bins(config: BinsConfig) -> PhaseLog:
    a, b, length = _kernels.bins_run(config.n, config.phases, _kernels.stream_key(config.seed))
    return PhaseLog(config.n, a, b, length, config.c)


def bins_trajectory(n: int, choices) -> np.ndarray:
    """(one-ball bins, empty bins) after each throw of the given bin sequence."""
    ch = np.ascontiguousarray(choices, dtype=np.int64)
    if len(ch) and (ch.min() < 0 or ch.max() >= n):
        raise ValueError("bin index out of range")
    return _kernels.bins_trajectory(n, ch)


def phase_length_bound(a, b, n: int, alpha: float = 4.0) -> np.ndarray:
    """High-probability phase-length bound
    2*alpha*min(n*sqrt(log n)/sqrt(a), n*(log n)**(1/3)/b**(1/3)),
    skipping a term whose count is zero. Natural log."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    log_n = math.log(n) if n > 1 else 0.0
    with np.errstate(divide="ignore"):
        t1 = np.where(a > 0, n * math.sqrt(log_n) / np.sqrt(np.maximum(a, 1)), np.inf)
        t2 = np.where(b > 0, n * log_n ** (1 / 3) / np.cbrt(np.maximum(b, 1)), np.inf)
    return 2 * alpha * np.minimum(t1, t2)


@dataclass
class RangeStats:
    count: int
    fraction: float
    mean_length: float
    p50: float
    p90: float
    p99: float


@dataclass
class RangeReport:
    n: int
    phases: int
    ranges: dict[int, RangeStats]
    bound_violation_fraction: float
    beta: int
    longest_range3_run: int
    range3_run_exceeds_beta: bool
    into_range3_fraction: float

    def to_dict(self) -> dict[str, Any]:
        d = {k: v for k, v in self.__dict__.items() if k != "ranges"}
        d["ranges"] = {str(r): s.__dict__ for r, s in self.ranges.items()}
        return d


def _longest_run(mask: np.ndarray) -> int:
    if not mask.any():
        return 0
    padded = np.concatenate(([0], mask.astype(np.int8), [0]))
    d = np.diff(padded)
    return int(np.max(np.flatnonzero(d == -1) - np.flatnonzero(d == 1)))


def phase_stats(records: PhaseLog, c: float | None = None, alpha: float = 4.0) -> RangeReport:
    if len(records) == 0:
        raise ValueError("no phases to summarize")
    c = records.c if c is None else c
    n = records.n
    rng = classify_range(records.a_start, n, c)
    ranges = {}
    for r in (1, 2, 3):
        sel = records.length[rng == r]
        if len(sel):
            p50, p90, p99 = np.percentile(sel, [50, 90, 99])
            ranges[r] = RangeStats(len(sel), len(sel) / len(records), float(sel.mean()), float(p50), float(p90), float(p99))
        else:
            ranges[r] = RangeStats(0, 0.0, math.nan, math.nan, math.nan, math.nan)
    bound = phase_length_bound(records.a_start, records.b_start, n, alpha)
    in3 = rng == 3
    beta = int(2 * c * c + 1)
    longest = _longest_run(in3)
    entered = np.count_nonzero(in3[1:] & ~in3[:-1]) / max(len(records) - 1, 1)
    return RangeReport(
        n=n,
        phases=len(records),
        ranges=ranges,
        bound_violation_fraction=float(np.mean(records.length > bound)),
        beta=beta,
        longest_range3_run=longest,
        range3_run_exceeds_beta=longest >= beta,
        into_range3_fraction=float(entered),
    )


@dataclass
class EquivalenceReport:
    n: int
    phases: int
    empirical_mean_length: float
    exact_latency: float
    relative_error: float
    max_start_deviation: float
    start_states_valid: bool

    def to_dict(self) -> dict[str, Any]:
        return dict(self.__dict__)


def bins_vs_chain(n: int, phases: int, seed: int) -> EquivalenceReport:
    """Compare the game with the exact SCU(0, 1) system chain.

    Phase starts are checked against the chain's distribution of the state
    entered by a success, and the mean phase length against 1/mu.
    """
    if n > SCU_SYSTEM_MAX_N:
        raise ChainError(f"n={n} exceeds the system-chain cap {SCU_SYSTEM_MAX_N}")
    log = run_bins(BinsConfig(n, phases, seed))
    chain = build_scu_system(n)
    pi = stationary(chain)
    exact = event_rate(chain, pi).latency
    successor = event_successor_distribution(chain, pi)

    lookup = np.full((n + 1) * (n + 1), -1, dtype=np.int64)
    for i, (a, b) in enumerate(chain.labels):
        lookup[a * (n + 1) + b] = i
    starts = lookup[log.a_start * (n + 1) + log.b_start]
    empirical = np.bincount(starts, minlength=chain.num_states) / len(starts)
    valid = bool(np.all(log.a_start + log.b_start == n))
    mean = float(log.length.mean())
    return EquivalenceReport(
        n=n,
        phases=phases,
        empirical_mean_length=mean,
        exact_latency=exact,
        relative_error=abs(mean - exact) / exact,
        max_start_deviation=float(np.max(np.abs(empirical - successor))),
        start_states_valid=valid,
    )
