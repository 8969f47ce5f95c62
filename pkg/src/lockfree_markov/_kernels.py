"""Compiled inner loops: counter-based random numbers, scheduler draws and
the per-step state machines of the simulated algorithms."""

import numpy as np
from numba import njit

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_LOW32 = np.uint64(0xFFFFFFFF)
_S11 = np.uint64(11)
_S27 = np.uint64(27)
_S30 = np.uint64(30)
_S31 = np.uint64(31)
_S32 = np.uint64(32)
_ONE = np.uint64(1)
_INV32 = 1.0 / 4294967296.0
_INV53 = 1.0 / 9007199254740992.0

_MASK64 = (1 << 64) - 1


def stream_key(seed: int) -> np.uint64:
    """Derive the 64-bit stream key for a user seed (SplitMix64 finalizer)."""
    z = (int(seed) + 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return np.uint64(z ^ (z >> 31))


@njit(cache=True, inline="always")
def _mix(z):
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


@njit(cache=True, inline="always")
def draw(key, t):
    """64 random bits for step ``t`` of stream ``key``."""
    return _mix(key + (np.uint64(t) + _ONE) * _GOLDEN)


@njit(cache=True, inline="always")
def below(u, k):
    return np.int64(((u >> _S32) * np.uint64(k)) >> _S32)


@njit(cache=True)
def raw_stream(key, start, count):
    out = np.empty(count, np.uint64)
    for i in range(count):
        out[i] = draw(key, start + i)
    return out


@njit(cache=True)
def draw_schedule(key, start, count, epoch_start, offsets, active, prob, alias):
    """Process chosen at steps ``start .. start+count-1``.

    Each epoch has its own active set and alias table; the high 32 bits of
    the step's random word pick an alias column, the low 32 bits the coin.
    """
    out = np.empty(count, np.int32)
    e = 0
    n_epochs = len(epoch_start)
    while e + 1 < n_epochs and epoch_start[e + 1] <= start:
        e += 1
    for i in range(count):
        t = start + i
        while e + 1 < n_epochs and epoch_start[e + 1] <= t:
            e += 1
        lo = offsets[e]
        k = offsets[e + 1] - lo
        u = draw(key, t)
        col = below(u, k)
        coin = np.float64(u & _LOW32) * _INV32
        if coin < prob[lo + col]:
            out[i] = active[lo + col]
        else:
            out[i] = active[lo + alias[lo + col]]
    return out


@njit(cache=True)
def scu_run(schedule, n, q, s):
    """SCU(q, s): q preamble steps, read of R, s-1 further reads, CAS.

    Returns the successful process per step (-1 if none) and the final
    register version.
    """
    steps = len(schedule)
    out = np.full(steps, -1, np.int32)
    pc = np.zeros(n, np.int64)
    seen = np.zeros(n, np.int64)
    version = 0
    cas_at = q + s
    for t in range(steps):
        p = schedule[t]
        c = pc[p]
        if c < q:
            pc[p] = c + 1
        elif c == q:
            seen[p] = version
            pc[p] = c + 1
        elif c < cas_at:
            pc[p] = c + 1
        elif seen[p] == version:
            version += 1
            out[t] = p
            pc[p] = 0
        else:
            pc[p] = q
    return out, version


@njit(cache=True)
def parallel_run(schedule, n, q):
    steps = len(schedule)
    out = np.full(steps, -1, np.int32)
    counter = np.zeros(n, np.int64)
    done = 0
    for t in range(steps):
        p = schedule[t]
        c = counter[p] + 1
        if c == q:
            counter[p] = 0
            out[t] = p
            done += 1
        else:
            counter[p] = c
    return out, done


@njit(cache=True)
def fai_run(schedule, n):
    """CAS-based fetch-and-increment where a CAS returns the current value."""
    steps = len(schedule)
    out = np.full(steps, -1, np.int32)
    local = np.zeros(n, np.int64)
    reg = 0
    for t in range(steps):
        p = schedule[t]
        if local[p] == reg:
            reg += 1
            out[t] = p
        local[p] = reg
    return out, reg


@njit(cache=True)
def unbounded_run(schedule, n):
    """Lock-free counter whose losers back off n*n*v dummy reads, where v is
    the value returned by their failed CAS."""
    steps = len(schedule)
    out = np.full(steps, -1, np.int32)
    local = np.zeros(n, np.int64)
    backoff = np.zeros(n, np.int64)
    streak = np.zeros(n, np.int64)
    longest = np.zeros(n, np.int64)
    reg = 0
    nn = n * n
    for t in range(steps):
        p = schedule[t]
        if backoff[p] > 0:
            backoff[p] -= 1
            continue
        if local[p] == reg:
            reg += 1
            local[p] = reg
            out[t] = p
            streak[p] = 0
        else:
            local[p] = reg
            backoff[p] = nn * reg
            streak[p] += 1
            if streak[p] > longest[p]:
                longest[p] = streak[p]
    return out, reg, longest


@njit(cache=True)
def bins_run(n, phases, key):
    """Iterated balls-into-bins game; one random word per thrown ball."""
    balls = np.ones(n, np.int8)
    twos = np.empty(n, np.int64)
    ntwo = 0
    ones = n
    zeros = 0
    a_start = np.empty(phases, np.int64)
    b_start = np.empty(phases, np.int64)
    length = np.empty(phases, np.int64)
    t = 0
    for ph in range(phases):
        a_start[ph] = ones
        b_start[ph] = zeros
        ell = 0
        while True:
            j = below(draw(key, t), n)
            t += 1
            ell += 1
            bj = balls[j]
            if bj == 0:
                balls[j] = 1
                ones += 1
                zeros -= 1
            elif bj == 1:
                balls[j] = 2
                ones -= 1
                twos[ntwo] = j
                ntwo += 1
            else:
                for k in range(ntwo):
                    b = twos[k]
                    if b != j:
                        balls[b] = 0
                        zeros += 1
                balls[j] = 1
                ones += 1
                ntwo = 0
                break
        length[ph] = ell
    return a_start, b_start, length


@njit(cache=True)
def bins_trajectory(n, choices):
    """(bins with one ball, bins with zero balls) after each throw of a
    given bin sequence."""
    balls = np.ones(n, np.int8)
    out = np.empty((len(choices), 2), np.int64)
    ones = n
    zeros = 0
    for t in range(len(choices)):
        j = choices[t]
        bj = balls[j]
        if bj == 0:
            balls[j] = 1
            ones += 1
            zeros -= 1
        elif bj == 1:
            balls[j] = 2
            ones -= 1
        else:
            for b in range(n):
                if balls[b] == 2 and b != j:
                    balls[b] = 0
                    zeros += 1
            balls[j] = 1
            ones += 1
        out[t, 0] = ones
        out[t, 1] = zeros
    return out


@njit(cache=True)
def walk_events(indptr, cols, cum, events, start, steps, key):
    """Random walk on a CSR chain; returns the step indices of event edges."""
    times = np.empty(steps, np.int64)
    m = 0
    x = start
    for t in range(steps):
        u = np.float64(draw(key, t) >> _S11) * _INV53
        k = indptr[x]
        hi = indptr[x + 1] - 1
        while k < hi and cum[k] <= u:
            k += 1
        if events[k]:
            times[m] = t
            m += 1
        x = cols[k]
    return times[:m]
