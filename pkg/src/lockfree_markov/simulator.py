"""Step-level simulation of lock-free algorithms under stochastic schedulers.

One process is scheduled per system step. The simulated register is a
version counter (proposed values are unique, so comparing versions is the
same as comparing values). Random draws come from a counter-based
generator keyed by ``(seed, step)``, so a run is a pure function of its
configuration.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

import numpy as np

from lockfree_markov import _kernels


class SchedulerError(ValueError):
    pass


@dataclass(frozen=True)
class SchedulerSpec:
    """Per-step scheduling distribution over the active processes.

    ``kind`` is ``"uniform"``, ``"weighted"`` or ``"uniform-with-crashes"``.
    ``crash_times`` maps a process to the first step at which it is no
    longer scheduled. ``theta`` defaults to ``1/n`` for the uniform kinds
    and to the smallest weight for ``"weighted"``.
    """

    kind: str = "uniform"
    weights: tuple[float, ...] | None = None
    theta: float | None = None
    crash_times: Mapping[int, int] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {
            "kind": self.kind,
            "weights": None if self.weights is None else list(self.weights),
            "theta": self.theta,
            "crash_times": {str(k): int(v) for k, v in sorted(self.crash_times.items())},
        }


def _alias_table(weights: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Walker/Vose alias table for a probability vector."""
    k = len(weights)
    scaled = weights * k
    prob = np.ones(k)
    alias = np.arange(k, dtype=np.int64)
    small = [i for i in range(k) if scaled[i] < 1.0]
    large = [i for i in range(k) if scaled[i] >= 1.0]
    while small and large:
        s = small.pop()
        g = large.pop()
        prob[s] = scaled[s]
        alias[s] = g
        scaled[g] = scaled[g] + scaled[s] - 1.0
        (small if scaled[g] < 1.0 else large).append(g)
    return prob, alias


class Scheduler:
    """Deterministic-given-seed source of scheduled process ids."""

    def __init__(self, spec: SchedulerSpec, n: int, seed: int):
        if n < 1:
            raise SchedulerError("need at least one process")
        self.spec = spec
        self.n = n
        self.seed = int(seed)
        self._key = _kernels.stream_key(seed)

        crash = {int(p): int(t) for p, t in spec.crash_times.items()}
        if any(p < 0 or p >= n for p in crash):
            raise SchedulerError("crash time given for an unknown process")
        if any(t < 0 for t in crash.values()):
            raise SchedulerError("crash times must be non-negative")
        if len(crash) >= n:
            raise SchedulerError("at least one process must stay correct")
        if spec.kind == "uniform" and crash:
            raise SchedulerError("use kind 'uniform-with-crashes' to schedule crashes")

        if spec.kind in ("uniform", "uniform-with-crashes"):
            if spec.weights is not None:
                raise SchedulerError("uniform schedulers take no weights")
            base = np.full(n, 1.0 / n)
        elif spec.kind == "weighted":
            if spec.weights is None or len(spec.weights) != n:
                raise SchedulerError("weighted scheduler needs one weight per process")
            base = np.asarray(spec.weights, dtype=float)
            if np.any(base < 0) or abs(base.sum() - 1.0) > 1e-9:
                raise SchedulerError("weights must be non-negative and sum to 1 (well-formedness)")
        else:
            raise SchedulerError(f"unknown scheduler kind {spec.kind!r}")

        theta = spec.theta
        if theta is None:
            theta = float(base.min())
        if not 0.0 < theta <= 1.0:
            raise SchedulerError("theta must lie in (0, 1]")
        if np.any(base < theta - 1e-12):
            raise SchedulerError(
                f"weight {base.min():g} below threshold theta={theta:g} (weak fairness)"
            )
        self.theta = theta

        # one epoch per distinct crash time; the active set only shrinks
        times = sorted({0, *crash.values()})
        starts, offsets, active, prob, alias = [], [0], [], [], []
        for t in times:
            live = [p for p in range(n) if crash.get(p, math.inf) > t]
            w = base[live] / base[live].sum()
            pr, al = _alias_table(w)
            starts.append(t)
            active.extend(live)
            prob.extend(pr)
            alias.extend(al)
            offsets.append(len(active))
        self._epoch_start = np.array(starts, dtype=np.int64)
        self._offsets = np.array(offsets, dtype=np.int64)
        self._active = np.array(active, dtype=np.int32)
        self._prob = np.array(prob, dtype=np.float64)
        self._alias = np.array(alias, dtype=np.int64)
        self.crash_times = crash

    def draw(self, start: int, count: int) -> np.ndarray:
        """Processes scheduled at steps ``start .. start+count-1``."""
        return _kernels.draw_schedule(
            self._key, int(start), int(count), self._epoch_start, self._offsets,
            self._active, self._prob, self._alias,
        )

    def active_at(self, step: int) -> np.ndarray:
        e = int(np.searchsorted(self._epoch_start, step, side="right")) - 1
        return self._active[self._offsets[e]:self._offsets[e + 1]].copy()

    def correct(self) -> list[int]:
        return [p for p in range(self.n) if p not in self.crash_times]


def make_scheduler(spec: SchedulerSpec, n: int, seed: int = 0) -> Scheduler:
    return Scheduler(spec, n, seed)


UNIFORM = SchedulerSpec()


@dataclass(frozen=True)
class ScuProgram:
    """SCU(q, s): ``q`` preamble steps, then a loop of ``s`` reads (the
    first one reads the decision register) and one CAS."""

    q: int = 0
    s: int = 1

    def __post_init__(self):
        if self.q < 0 or self.s < 1:
            raise ValueError("need q >= 0 and s >= 1")

    @property
    def solo_steps(self) -> int:
        return self.q + self.s + 1


@dataclass(eq=False)
class Trace:
    """Output of one simulated run.

    ``step_success[t]`` is the process that completed an operation at step
    ``t`` or -1. ``schedule`` is the step log (process per step).
    """

    model: str
    n: int
    steps: int
    seed: int
    step_success: np.ndarray
    register_version: int
    schedule: np.ndarray
    params: dict[str, Any] = field(default_factory=dict)
    scheduler: dict[str, Any] = field(default_factory=dict)
    crashed: tuple[int, ...] = ()

    @property
    def success_steps(self) -> np.ndarray:
        return np.flatnonzero(self.step_success >= 0)

    @property
    def success_process(self) -> np.ndarray:
        return self.step_success[self.step_success >= 0]

    @property
    def total_successes(self) -> int:
        return int(np.count_nonzero(self.step_success >= 0))

    def completions(self, process: int) -> np.ndarray:
        return np.flatnonzero(self.step_success == process)

    @property
    def solo_steps(self) -> int:
        """Steps a process needs alone from method start to complete."""
        q = self.params.get("q", 0) or 0
        s = self.params.get("s", 0) or 0
        if self.model == "parallel":
            return max(q, 1)
        if self.model == "scu":
            return q + s + 1
        return 1

    def to_dict(self) -> dict[str, Any]:
        return {
            "format": "lockfree-markov.trace/1",
            "model": self.model,
            "n": self.n,
            "steps": self.steps,
            "seed": self.seed,
            "params": self.params,
            "scheduler": self.scheduler,
            "crashed": list(self.crashed),
            "register_version": self.register_version,
            "success_steps": self.success_steps.tolist(),
            "success_process": self.success_process.tolist(),
        }


def _schedule(n: int, steps: int, seed: int, sched: SchedulerSpec | None) -> tuple[np.ndarray, Scheduler]:
    if steps < 1:
        raise ValueError("steps must be at least 1")
    scheduler = make_scheduler(sched or UNIFORM, n, seed)
    return scheduler.draw(0, steps), scheduler


def _trace(model, n, steps, seed, out, version, schedule, scheduler, params) -> Trace:
    return Trace(
        model=model, n=n, steps=steps, seed=int(seed), step_success=out,
        register_version=int(version), schedule=schedule, params=params,
        scheduler=scheduler.spec.to_dict(), crashed=tuple(sorted(scheduler.crash_times)),
    )


def simulate_scu(program: ScuProgram, n: int, schedule: Sequence[int]) -> tuple[np.ndarray, int]:
    """Run SCU(q, s) on an explicit schedule; returns (step_success, version)."""
    sched = np.ascontiguousarray(schedule, dtype=np.int32)
    if len(sched) and (sched.min() < 0 or sched.max() >= n):
        raise ValueError("schedule names an unknown process")
    return _kernels.scu_run(sched, n, program.q, program.s)


def run_scu(program: ScuProgram, n: int, steps: int, seed: int, sched: SchedulerSpec | None = None) -> Trace:
    schedule, scheduler = _schedule(n, steps, seed, sched)
    out, version = _kernels.scu_run(schedule, n, program.q, program.s)
    return _trace("scu", n, steps, seed, out, version, schedule, scheduler, {"q": program.q, "s": program.s})


def run_parallel(n: int, q: int, steps: int, seed: int, sched: SchedulerSpec | None = None) -> Trace:
    """Parallel code: an operation completes after ``q`` steps of its process."""
    if q < 1:
        raise ValueError("parallel code needs q >= 1")
    schedule, scheduler = _schedule(n, steps, seed, sched)
    out, done = _kernels.parallel_run(schedule, n, q)
    return _trace("parallel", n, steps, seed, out, done, schedule, scheduler, {"q": q, "s": 0})


def run_fai(n: int, steps: int, seed: int, sched: SchedulerSpec | None = None) -> Trace:
    """Fetch-and-increment built on a CAS that returns the current value."""
    schedule, scheduler = _schedule(n, steps, seed, sched)
    out, reg = _kernels.fai_run(schedule, n)
    return _trace("fai", n, steps, seed, out, reg, schedule, scheduler, {"q": 0, "s": 0})


@dataclass
class MonopolyStats:
    first_winner: int
    total_successes: int
    first_winner_successes: int
    longest_losing_streak: list[int]
    trace: Trace | None = field(default=None, repr=False)

    @property
    def monopoly_fraction(self) -> float:
        return self.first_winner_successes / self.total_successes if self.total_successes else 0.0

    @property
    def monopolized(self) -> bool:
        return self.total_successes > 0 and self.first_winner_successes == self.total_successes

    def to_dict(self) -> dict[str, Any]:
        return {
            "first_winner": self.first_winner,
            "total_successes": self.total_successes,
            "first_winner_successes": self.first_winner_successes,
            "monopoly_fraction": self.monopoly_fraction,
            "longest_losing_streak": list(self.longest_losing_streak),
        }


def run_unbounded_lf_trace(n: int, steps: int, seed: int, sched: SchedulerSpec | None = None) -> tuple[Trace, np.ndarray]:
    schedule, scheduler = _schedule(n, steps, seed, sched)
    out, reg, longest = _kernels.unbounded_run(schedule, n)
    return _trace("unbounded", n, steps, seed, out, reg, schedule, scheduler, {"q": 0, "s": 0}), longest


def run_unbounded_lf(n: int, steps: int, seed: int, sched: SchedulerSpec | None = None) -> MonopolyStats:
    """Unbounded lock-free counter: a failed CAS returning value v costs the
    loser n*n*v dummy reads before it retries."""
    trace, longest = run_unbounded_lf_trace(n, steps, seed, sched)
    winners = trace.success_process
    first = int(winners[0]) if len(winners) else -1
    return MonopolyStats(
        first_winner=first,
        total_successes=len(winners),
        first_winner_successes=int(np.count_nonzero(winners == first)),
        longest_losing_streak=longest.tolist(),
        trace=trace,
    )


@dataclass
class ProgressReport:
    window: int
    max_gap: list[int]
    completed_every_window: list[bool]
    required: list[int]

    @property
    def all_progress(self) -> bool:
        return all(self.completed_every_window[p] for p in self.required)

    @property
    def window_exceeded(self) -> list[int]:
        return [p for p in self.required if self.max_gap[p] > self.window]


def check_progress(trace: Trace, window: int) -> ProgressReport:
    """Per process: the longest stretch of steps without a completion
    (counting the run boundaries), and whether it completed at least once
    in every disjoint ``window``-step block. Crashed processes are reported
    but not required to progress."""
    if window < 1:
        raise ValueError("window must be positive")
    blocks = trace.steps // window
    gaps, every = [], []
    for p in range(trace.n):
        done = trace.completions(p)
        edges = np.concatenate(([-1], done, [trace.steps]))
        gaps.append(int(np.max(np.diff(edges)) - 1))
        hit = np.zeros(blocks, dtype=bool)
        inside = done[done < blocks * window]
        hit[inside // window] = True
        every.append(bool(hit.all()))
    required = [p for p in range(trace.n) if p not in trace.crashed]
    return ProgressReport(window, gaps, every, required)


def max_progress_bound(theta: float, T: int) -> float:
    """Expected maximal-progress bound (1/theta)**T for a T-bounded
    minimal-progress algorithm."""
    if not 0.0 < theta <= 1.0:
        raise ValueError("theta must lie in (0, 1]")
    if T < 1:
        raise ValueError("T must be at least 1")
    return (1.0 / theta) ** T


def scu_state_counts(n: int, schedule: Sequence[int]) -> np.ndarray:
    """(Read, OldCAS) counts after each step of SCU(0, 1) on a schedule.

    Plain Python; meant for short schedules in cross-checks.
    """
    read = [True] * n
    seen = [0] * n
    version = 0
    out = np.empty((len(schedule), 2), dtype=np.int64)
    for t, p in enumerate(schedule):
        if read[p]:
            seen[p] = version
            read[p] = False
        else:
            if seen[p] == version:
                version += 1
            read[p] = True
        stale = sum(1 for i in range(n) if not read[i] and seen[i] != version)
        out[t] = (sum(read), stale)
    return out
