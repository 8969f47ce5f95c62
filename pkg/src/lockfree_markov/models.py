"""Builders for the concrete chains of the scan-validate (SCU), fetch-and-
increment (FAI) and parallel-code algorithms, with their lifting maps.

Every transition probability in these chains is ``k/n`` for ``n``
processes, so each builder emits integer numerators over denominator ``n``.

State orderings:

* SCU individual: base-3 code, process ``p`` is digit ``3**p`` with
  Read=0, CCAS=1, OldCAS=2; the all-OldCAS code (the largest) is absent.
* SCU system: ``(a, b)`` in lexicographic order.
* FAI individual: non-empty subsets by bitmask, index ``mask - 1``.
* FAI global: ``v_i`` at index ``i - 1``.
* parallel individual: base-q code of the counter vector, process ``p`` is
  digit ``q**p``; parallel system: occupancy vectors in lexicographic order.
"""

from __future__ import annotations

import enum
import itertools
import math

import numpy as np

from lockfree_markov.lifting import LiftingMap
from lockfree_markov.markov import Chain, ChainError

SCU_INDIVIDUAL_MAX_N = 10
SCU_SYSTEM_MAX_N = 10_000
FAI_INDIVIDUAL_MAX_N = 20
FAI_GLOBAL_MAX_N = 1_000_000
PARALLEL_INDIVIDUAL_MAX_STATES = 1_000_000
PARALLEL_SYSTEM_MAX_STATES = 100_000


class LocalState(enum.IntEnum):
    """Extended local state of a process in the scan-validate loop."""

    READ = 0
    CCAS = 1
    OLDCAS = 2


_LETTER = {LocalState.READ: "R", LocalState.CCAS: "C", LocalState.OLDCAS: "O"}


def _check(name: str, ok: bool, detail: str) -> None:
    if not ok:
        raise ChainError(f"{name}: parameters outside the supported range ({detail})")


# -- SCU(0, 1) ---------------------------------------------------------------


def _scu_digits(n: int) -> np.ndarray:
    codes = np.arange(3**n - 1, dtype=np.int64)
    powers = 3 ** np.arange(n, dtype=np.int64)
    return (codes[:, None] // powers[None, :]) % 3


def scu_label(digits) -> str:
    return "".join(_LETTER[LocalState(int(d))] for d in digits)


def build_scu_individual(n: int) -> Chain:
    _check("build_scu_individual", 1 <= n <= SCU_INDIVIDUAL_MAX_N, f"1 <= n <= {SCU_INDIVIDUAL_MAX_N}")
    digits = _scu_digits(n)
    num = len(digits)
    codes = np.arange(num, dtype=np.int64)
    powers = 3 ** np.arange(n, dtype=np.int64)
    ccas_part = ((digits == LocalState.CCAS) * powers).sum(axis=1)

    targets = np.empty((num, n), dtype=np.int64)
    for p in range(n):
        d = digits[:, p]
        targets[:, p] = np.where(
            d == LocalState.READ,
            codes + powers[p],
            np.where(
                d == LocalState.OLDCAS,
                codes - 2 * powers[p],
                # stepper CCAS -> Read; every other CCAS -> OldCAS
                codes - powers[p] + (ccas_part - powers[p]),
            ),
        )
    events = digits == LocalState.CCAS
    labels = [scu_label(row) for row in digits]
    return Chain.from_arrays(
        num,
        np.repeat(codes, n),
        targets.ravel(),
        np.ones(num * n, dtype=np.int64),
        n,
        events.ravel(),
        labels,
        name=f"scu-individual-n{n}",
    )


def scu_individual_success_mask(chain: Chain, n: int, process: int) -> np.ndarray:
    """Event mask selecting the successful CAS steps of one process.

    A success edge sends exactly the stepper from CCAS to Read (every other
    CCAS process goes to OldCAS), which identifies the stepper.
    """
    digits = _scu_digits(n)
    stepped = (digits[chain.rows, process] == LocalState.CCAS) & (digits[chain.cols, process] == LocalState.READ)
    return chain.event_mask & stepped


def scu_system_states(n: int) -> list[tuple[int, int]]:
    return [(a, b) for a in range(n + 1) for b in range(n + 1 - a) if (a, b) != (0, n)]


def _scu_system_index(n: int) -> np.ndarray:
    table = np.full((n + 1, n + 1), -1, dtype=np.int64)
    for k, (a, b) in enumerate(scu_system_states(n)):
        table[a, b] = k
    return table


def build_scu_system(n: int) -> Chain:
    _check("build_scu_system", 1 <= n <= SCU_SYSTEM_MAX_N, f"1 <= n <= {SCU_SYSTEM_MAX_N}")
    states = np.array(scu_system_states(n), dtype=np.int64)
    a, b = states[:, 0], states[:, 1]
    c = n - a - b
    table = _scu_system_index(n)
    src = np.arange(len(states), dtype=np.int64)

    rows, cols, nums, ev = [], [], [], []
    m = a > 0  # a Read process steps
    rows.append(src[m]); cols.append(table[a[m] - 1, b[m]]); nums.append(a[m]); ev.append(np.zeros(m.sum(), bool))
    m = b > 0  # an OldCAS process steps
    rows.append(src[m]); cols.append(table[a[m] + 1, b[m] - 1]); nums.append(b[m]); ev.append(np.zeros(m.sum(), bool))
    m = c > 0  # a CCAS process succeeds; the other CCAS processes go stale
    rows.append(src[m]); cols.append(table[a[m] + 1, n - a[m] - 1]); nums.append(c[m]); ev.append(np.ones(m.sum(), bool))
    return Chain.from_arrays(
        len(states),
        np.concatenate(rows),
        np.concatenate(cols),
        np.concatenate(nums),
        n,
        np.concatenate(ev),
        [tuple(map(int, s)) for s in states],
        name=f"scu-system-n{n}",
    )


def scu_lifting_map(n: int) -> LiftingMap:
    _check("scu_lifting_map", 1 <= n <= SCU_INDIVIDUAL_MAX_N, f"1 <= n <= {SCU_INDIVIDUAL_MAX_N}")
    digits = _scu_digits(n)
    a = (digits == LocalState.READ).sum(axis=1)
    b = (digits == LocalState.OLDCAS).sum(axis=1)
    table = _scu_system_index(n)
    return LiftingMap.from_array(table[a, b], num_coarse=len(scu_system_states(n)))


# -- fetch-and-increment -----------------------------------------------------


def build_fai_individual(n: int) -> Chain:
    _check("build_fai_individual", 1 <= n <= FAI_INDIVIDUAL_MAX_N, f"1 <= n <= {FAI_INDIVIDUAL_MAX_N}")
    masks = np.arange(1, 2**n, dtype=np.int64)
    targets = np.empty((len(masks), n), dtype=np.int64)
    events = np.empty((len(masks), n), dtype=bool)
    for p in range(n):
        bit = np.int64(1) << p
        holds = (masks & bit) != 0
        events[:, p] = holds
        targets[:, p] = np.where(holds, bit, masks | bit)
    labels = [tuple(p for p in range(n) if (m >> p) & 1) for m in masks.tolist()] if n <= 12 else None
    return Chain.from_arrays(
        len(masks),
        np.repeat(masks - 1, n),
        targets.ravel() - 1,
        np.ones(targets.size, dtype=np.int64),
        n,
        events.ravel(),
        labels,
        name=f"fai-individual-n{n}",
    )


def fai_individual_success_mask(chain: Chain, process: int) -> np.ndarray:
    """Edges where ``process`` steps while holding the current value."""
    bit = 1 << process
    src = chain.rows + 1
    dst = chain.cols + 1
    return chain.event_mask & ((src & bit) != 0) & (dst == bit)


def build_fai_global(n: int) -> Chain:
    _check("build_fai_global", 1 <= n <= FAI_GLOBAL_MAX_N, f"1 <= n <= {FAI_GLOBAL_MAX_N}")
    i = np.arange(1, n + 1, dtype=np.int64)
    up = i < n
    rows = np.concatenate([i - 1, i[up] - 1])
    cols = np.concatenate([np.zeros(n, dtype=np.int64), i[up]])
    nums = np.concatenate([i, n - i[up]])
    ev = np.concatenate([np.ones(n, bool), np.zeros(up.sum(), bool)])
    return Chain.from_arrays(n, rows, cols, nums, n, ev, list(range(1, n + 1)), name=f"fai-global-n{n}")


def fai_lifting_map(n: int) -> LiftingMap:
    _check("fai_lifting_map", 1 <= n <= FAI_INDIVIDUAL_MAX_N, f"1 <= n <= {FAI_INDIVIDUAL_MAX_N}")
    masks = np.arange(1, 2**n, dtype=np.int64)
    sizes = np.zeros(len(masks), dtype=np.int64)
    for p in range(n):
        sizes += (masks >> p) & 1
    return LiftingMap.from_array(sizes - 1, num_coarse=n)


def fai_hitting_recurrence(n: int) -> np.ndarray:
    """Z[i] = expected steps to reach v_1 from v_{n-i}; Z[0] = 1 and
    Z[i] = (i/n) Z[i-1] + 1."""
    if n < 1:
        raise ValueError("n must be positive")
    z = np.empty(n)
    z[0] = 1.0
    prev = 1.0
    for i in range(1, n):
        prev = i * prev / n + 1.0
        z[i] = prev
    return z


# -- parallel code -----------------------------------------------------------


def _parallel_digits(n: int, q: int) -> np.ndarray:
    codes = np.arange(q**n, dtype=np.int64)
    powers = q ** np.arange(n, dtype=np.int64)
    return (codes[:, None] // powers[None, :]) % q


def build_parallel_individual(n: int, q: int) -> Chain:
    _check(
        "build_parallel_individual",
        n >= 1 and q >= 1 and q**n <= PARALLEL_INDIVIDUAL_MAX_STATES,
        f"q**n <= {PARALLEL_INDIVIDUAL_MAX_STATES}",
    )
    digits = _parallel_digits(n, q)
    codes = np.arange(len(digits), dtype=np.int64)
    powers = q ** np.arange(n, dtype=np.int64)
    wraps = digits == q - 1
    targets = np.where(wraps, codes[:, None] - (q - 1) * powers, codes[:, None] + powers)
    labels = [tuple(map(int, row)) for row in digits] if len(digits) <= 50_000 else None
    return Chain.from_arrays(
        len(codes),
        np.repeat(codes, n),
        targets.ravel(),
        np.ones(targets.size, dtype=np.int64),
        n,
        wraps.ravel(),
        labels,
        name=f"parallel-individual-n{n}-q{q}",
    )


def parallel_individual_success_mask(chain: Chain, n: int, q: int, process: int) -> np.ndarray:
    digits = _parallel_digits(n, q)
    return chain.event_mask & (digits[chain.rows, process] == q - 1) & (digits[chain.cols, process] == 0)


def parallel_system_states(n: int, q: int) -> list[tuple[int, ...]]:
    """Occupancy vectors (v_0, ..., v_{q-1}) summing to n, lexicographic."""
    out = []
    for bars in itertools.combinations(range(n + q - 1), q - 1):
        prev = -1
        vec = []
        for bar in bars:
            vec.append(bar - prev - 1)
            prev = bar
        vec.append(n + q - 2 - prev)
        out.append(tuple(vec))
    out.sort()
    return out


def build_parallel_system(n: int, q: int) -> Chain:
    count = math.comb(n + q - 1, q - 1) if q >= 1 else 0
    _check(
        "build_parallel_system",
        n >= 1 and q >= 1 and count <= PARALLEL_SYSTEM_MAX_STATES,
        f"at most {PARALLEL_SYSTEM_MAX_STATES} occupancy states",
    )
    states = parallel_system_states(n, q)
    index = {s: k for k, s in enumerate(states)}
    rows, cols, nums, ev = [], [], [], []
    for k, s in enumerate(states):
        for i, v in enumerate(s):
            if v == 0:
                continue
            t = list(s)
            t[i] -= 1
            t[(i + 1) % q] += 1
            rows.append(k)
            cols.append(index[tuple(t)])
            nums.append(v)
            ev.append(i == q - 1)
    return Chain.from_arrays(len(states), rows, cols, nums, n, ev, states, name=f"parallel-system-n{n}-q{q}")


def parallel_lifting_map(n: int, q: int) -> LiftingMap:
    _check(
        "parallel_lifting_map",
        n >= 1 and q >= 1 and q**n <= PARALLEL_INDIVIDUAL_MAX_STATES,
        f"q**n <= {PARALLEL_INDIVIDUAL_MAX_STATES}",
    )
    digits = _parallel_digits(n, q)
    occupancy = np.stack([(digits == j).sum(axis=1) for j in range(q)], axis=1)
    index = {s: k for k, s in enumerate(parallel_system_states(n, q))}
    return LiftingMap.from_array(
        np.array([index[tuple(map(int, row))] for row in occupancy], dtype=np.int64),
        num_coarse=len(index),
    )


# -- registry used by the CLI and the sweeps ---------------------------------

MODEL_BUILDERS = {
    "scu-ind": lambda n, q=None: build_scu_individual(n),
    "scu-sys": lambda n, q=None: build_scu_system(n),
    "fai-ind": lambda n, q=None: build_fai_individual(n),
    "fai-glob": lambda n, q=None: build_fai_global(n),
    "par-ind": lambda n, q=None: build_parallel_individual(n, q),
    "par-sys": lambda n, q=None: build_parallel_system(n, q),
}


def lifting_pair(model: str, n: int, q: int | None = None) -> tuple[Chain, Chain, LiftingMap]:
    """(fine chain, coarse chain, canonical map) for ``scu``, ``fai`` or ``par``."""
    if model == "scu":
        return build_scu_individual(n), build_scu_system(n), scu_lifting_map(n)
    if model == "fai":
        return build_fai_individual(n), build_fai_global(n), fai_lifting_map(n)
    if model in ("par", "parallel"):
        if q is None:
            raise ValueError("parallel model needs q")
        return build_parallel_individual(n, q), build_parallel_system(n, q), parallel_lifting_map(n, q)
    raise ValueError(f"unknown model {model!r}")


def individual_success_mask(model: str, chain: Chain, n: int, process: int, q: int | None = None) -> np.ndarray:
    if model == "scu":
        return scu_individual_success_mask(chain, n, process)
    if model == "fai":
        return fai_individual_success_mask(chain, process)
    if model in ("par", "parallel"):
        return parallel_individual_success_mask(chain, n, q, process)
    raise ValueError(f"unknown model {model!r}")
