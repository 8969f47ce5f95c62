"""Finite discrete-time Markov chains with exact rational transitions.

Transition probabilities are stored as integer numerators over one common
denominator, so row sums are checked exactly when a chain is built. All
solving happens in float64 on a CSR copy of the matrix.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from typing import Any, Iterable, NamedTuple, Sequence

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.csgraph as csgraph
import scipy.sparse.linalg as spla

DENSE_LIMIT = 2000
MAX_ITERATIONS = 10_000_000
DOT_LIMIT = 200


class ChainError(ValueError):
    """Raised when a chain cannot support the requested computation."""


def _as_fraction(p: Any) -> Fraction:
    if isinstance(p, float):
        return Fraction(p).limit_denominator(10**12)
    return Fraction(p)


@dataclass(frozen=True, eq=False)
class Chain:
    """A finite Markov chain in sparse triplet form.

    ``numerators[k] / denominator`` is the probability of the edge
    ``rows[k] -> cols[k]``. Duplicate edges are merged on construction and
    zero-probability edges are dropped, so the triplets are exactly the
    support of the transition matrix. ``event_mask`` marks the edges whose
    traversal counts as a completion event.
    """

    num_states: int
    rows: np.ndarray
    cols: np.ndarray
    numerators: np.ndarray
    denominator: int
    event_mask: np.ndarray
    labels: Sequence[Any] | None = None
    name: str = ""

    @classmethod
    def from_arrays(
        cls,
        num_states: int,
        rows,
        cols,
        numerators,
        denominator: int,
        events=None,
        labels: Sequence[Any] | None = None,
        name: str = "",
    ) -> Chain:
        if num_states < 1:
            raise ChainError("a chain needs at least one state")
        if denominator < 1:
            raise ChainError("denominator must be a positive integer")
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        nums = np.asarray(numerators, dtype=np.int64)
        ev = np.zeros(len(rows), dtype=bool) if events is None else np.asarray(events, dtype=bool)
        if not (len(rows) == len(cols) == len(nums) == len(ev)):
            raise ChainError("triplet arrays differ in length")
        if len(rows) and (rows.min() < 0 or cols.min() < 0 or max(rows.max(), cols.max()) >= num_states):
            raise ChainError("edge endpoint outside the state range")
        if labels is not None and len(labels) != num_states:
            raise ChainError("one label per state is required")

        keep = nums != 0
        if np.any(ev & ~keep):
            raise ChainError("event edge has zero probability")
        rows, cols, nums, ev = rows[keep], cols[keep], nums[keep], ev[keep]

        key = rows * num_states + cols
        order = np.argsort(key, kind="stable")
        key, rows, cols, nums, ev = key[order], rows[order], cols[order], nums[order], ev[order]
        if len(key) > 1 and np.any(key[1:] == key[:-1]):
            uniq, start = np.unique(key, return_index=True)
            merged = np.add.reduceat(nums, start)
            ev_any = np.logical_or.reduceat(ev, start)
            ev_all = np.logical_and.reduceat(ev, start)
            if np.any(ev_any != ev_all):
                raise ChainError("parallel edges disagree on the event mark")
            rows, cols, nums, ev = rows[start], cols[start], merged, ev_any
        return cls(
            num_states=int(num_states),
            rows=rows,
            cols=cols,
            numerators=nums,
            denominator=int(denominator),
            event_mask=ev,
            labels=labels,
            name=name,
        )

    @classmethod
    def from_edges(
        cls,
        num_states: int,
        edges: Iterable[tuple[int, int, Any]],
        event_edges: Iterable[tuple[int, int]] = (),
        labels: Sequence[Any] | None = None,
        name: str = "",
    ) -> Chain:
        """Build from ``(i, j, p)`` triples; ``p`` may be a Fraction, int,
        string such as ``"1/3"`` or a float (rationalised)."""
        edges = [(int(i), int(j), _as_fraction(p)) for i, j, p in edges]
        den = 1
        for _, _, p in edges:
            den = math.lcm(den, p.denominator)
        if den > 2**62:
            raise ChainError("common denominator too large for exact storage")
        marked = {(int(i), int(j)) for i, j in event_edges}
        support = {(i, j) for i, j, p in edges if p != 0}
        missing = marked - support
        if missing:
            raise ChainError(f"event edges outside the transition support: {sorted(missing)[:5]}")
        rows = [i for i, _, _ in edges]
        cols = [j for _, j, _ in edges]
        nums = [p.numerator * (den // p.denominator) for _, _, p in edges]
        ev = [(i, j) in marked for i, j, _ in edges]
        return cls.from_arrays(num_states, rows, cols, nums, den, ev, labels, name)

    @property
    def num_edges(self) -> int:
        return len(self.rows)

    @cached_property
    def probabilities(self) -> np.ndarray:
        return self.numerators / float(self.denominator)

    @cached_property
    def matrix(self) -> sp.csr_matrix:
        return sp.csr_matrix(
            (self.probabilities, (self.rows, self.cols)),
            shape=(self.num_states, self.num_states),
        )

    @property
    def event_edges(self) -> set[tuple[int, int]]:
        return set(zip(self.rows[self.event_mask].tolist(), self.cols[self.event_mask].tolist()))

    @property
    def transitions(self) -> dict[tuple[int, int], Fraction]:
        d = self.denominator
        return {
            (int(i), int(j)): Fraction(int(p), d)
            for i, j, p in zip(self.rows, self.cols, self.numerators)
        }

    def probability(self, i: int, j: int) -> Fraction:
        hit = np.flatnonzero((self.rows == i) & (self.cols == j))
        if len(hit) == 0:
            return Fraction(0)
        return Fraction(int(self.numerators[hit[0]]), self.denominator)

    def index_of(self, label: Any) -> int:
        if self.labels is None:
            raise ChainError("chain has no labels")
        return self._label_index[label]

    @cached_property
    def _label_index(self) -> dict[Any, int]:
        return {lab: k for k, lab in enumerate(self.labels)}

    def with_event_mask(self, mask) -> Chain:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != self.event_mask.shape:
            raise ChainError("event mask must have one entry per edge")
        return Chain(
            self.num_states, self.rows, self.cols, self.numerators,
            self.denominator, mask, self.labels, self.name,
        )

    def with_events(self, edges: Iterable[tuple[int, int]]) -> Chain:
        wanted = {(int(i), int(j)) for i, j in edges}
        key = self.rows * self.num_states + self.cols
        wanted_keys = np.fromiter((i * self.num_states + j for i, j in wanted), dtype=np.int64, count=len(wanted))
        mask = np.isin(key, wanted_keys)
        if mask.sum() != len(wanted):
            raise ChainError("event edges outside the transition support")
        return self.with_event_mask(mask)

    # -- serialization -----------------------------------------------------

    def to_dict(self) -> dict[str, Any]:
        g = np.gcd(self.numerators, self.denominator)
        return {
            "format": "lockfree-markov.chain/1",
            "name": self.name,
            "num_states": self.num_states,
            "labels": None if self.labels is None else [_label_to_json(x) for x in self.labels],
            "transitions": [
                [int(i), int(j), int(p // k), int(self.denominator // k)]
                for i, j, p, k in zip(self.rows, self.cols, self.numerators, g)
            ],
            "event_edges": [[int(i), int(j)] for i, j in zip(self.rows[self.event_mask], self.cols[self.event_mask])],
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> Chain:
        edges = [(i, j, Fraction(p, q)) for i, j, p, q in data["transitions"]]
        labels = data.get("labels")
        if labels is not None:
            labels = [_label_from_json(x) for x in labels]
        return cls.from_edges(
            data["num_states"],
            edges,
            [tuple(e) for e in data.get("event_edges", [])],
            labels,
            data.get("name", ""),
        )

    def to_dot(self) -> str:
        if self.num_states > DOT_LIMIT:
            raise ChainError(f"DOT export is limited to {DOT_LIMIT} states")
        lines = [f'digraph "{self.name or "chain"}" {{']
        for k in range(self.num_states):
            lab = k if self.labels is None else self.labels[k]
            lines.append(f'  {k} [label="{lab}"];')
        g = np.gcd(self.numerators, self.denominator)
        for i, j, p, d, ev in zip(self.rows, self.cols, self.numerators, g, self.event_mask):
            style = ', color="red"' if ev else ""
            lines.append(f'  {i} -> {j} [label="{p // d}/{self.denominator // d}"{style}];')
        lines.append("}")
        return "\n".join(lines) + "\n"


def _label_to_json(x):
    if isinstance(x, (tuple, list)):
        return [_label_to_json(v) for v in x]
    if isinstance(x, np.integer):
        return int(x)
    return x


def _label_from_json(x):
    if isinstance(x, list):
        return tuple(_label_from_json(v) for v in x)
    return x


@dataclass(frozen=True, eq=False)
class Distribution:
    probabilities: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probabilities, dtype=float)
        object.__setattr__(self, "probabilities", p)
        if p.ndim != 1 or len(p) == 0:
            raise ChainError("distribution must be a non-empty vector")
        if np.any(p < -1e-12) or abs(p.sum() - 1.0) > 1e-9:
            raise ChainError("distribution entries must be non-negative and sum to 1")

    def __len__(self) -> int:
        return len(self.probabilities)

    def __getitem__(self, k):
        return self.probabilities[k]

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.probabilities, dtype=dtype)


def _vector(pi) -> np.ndarray:
    if isinstance(pi, Distribution):
        return pi.probabilities
    return np.asarray(pi, dtype=float)


@dataclass
class ValidationReport:
    row_sum_violations: list[tuple[int, Fraction]] = field(default_factory=list)
    out_of_range: list[tuple[int, int, Fraction]] = field(default_factory=list)
    unreachable: list[int] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not (self.row_sum_violations or self.out_of_range)

    def summary(self) -> str:
        if self.ok and not self.unreachable:
            return "valid"
        parts = []
        if self.row_sum_violations:
            s, total = self.row_sum_violations[0]
            parts.append(f"{len(self.row_sum_violations)} row-sum violation(s), e.g. state {s} sums to {total}")
        if self.out_of_range:
            parts.append(f"{len(self.out_of_range)} probability(ies) outside [0, 1]")
        if self.unreachable:
            parts.append(f"{len(self.unreachable)} state(s) unreachable from state 0")
        return "; ".join(parts)


def validate(chain: Chain) -> ValidationReport:
    report = ValidationReport()
    d = chain.denominator
    bad = np.flatnonzero((chain.numerators < 0) | (chain.numerators > d))
    report.out_of_range = [
        (int(chain.rows[k]), int(chain.cols[k]), Fraction(int(chain.numerators[k]), d)) for k in bad
    ]
    sums = np.zeros(chain.num_states, dtype=np.int64)
    np.add.at(sums, chain.rows, chain.numerators)
    report.row_sum_violations = [(int(s), Fraction(int(sums[s]), d)) for s in np.flatnonzero(sums != d)]
    order = csgraph.breadth_first_order(_graph(chain), 0, directed=True, return_predecessors=False)
    seen = np.zeros(chain.num_states, dtype=bool)
    seen[order] = True
    report.unreachable = np.flatnonzero(~seen).tolist()
    return report


def _graph(chain: Chain) -> sp.csr_matrix:
    return sp.csr_matrix(
        (np.ones(chain.num_edges, dtype=np.int8), (chain.rows, chain.cols)),
        shape=(chain.num_states, chain.num_states),
    )


def _require_valid(chain: Chain) -> None:
    report = validate(chain)
    if not report.ok:
        raise ChainError(f"invalid chain: {report.summary()}")


def is_irreducible(chain: Chain) -> bool:
    ncomp, _ = csgraph.connected_components(_graph(chain), directed=True, connection="strong")
    return ncomp == 1


def period(chain: Chain) -> int:
    """Period of an irreducible chain: gcd of all cycle lengths."""
    if not is_irreducible(chain):
        raise ChainError("period is only defined here for irreducible chains")
    order, pred = csgraph.breadth_first_order(_graph(chain), 0, directed=True, return_predecessors=True)
    level = np.zeros(chain.num_states, dtype=np.int64)
    for v in order[1:]:
        level[v] = level[pred[v]] + 1
    diffs = np.abs(level[chain.rows] + 1 - level[chain.cols])
    return int(np.gcd.reduce(diffs)) if len(diffs) else 1


def is_ergodic(chain: Chain) -> bool:
    """Irreducible and aperiodic. A single state with its self-loop counts."""
    _require_valid(chain)
    if chain.num_states == 1:
        return True
    return is_irreducible(chain) and period(chain) == 1


def _residual(P: sp.csr_matrix, x: np.ndarray) -> float:
    return float(np.max(np.abs(P.T @ x - x)))


def stationary(chain: Chain, tolerance: float = 1e-12) -> Distribution:
    """Unique stationary distribution of an irreducible chain.

    Periodic chains are accepted: irreducibility alone fixes the solution,
    and the damped iteration below is aperiodic by construction.
    """
    _require_valid(chain)
    if not is_irreducible(chain):
        raise ChainError("stationary undefined/non-unique: chain is not irreducible")
    P = chain.matrix
    n = chain.num_states
    if n == 1:
        return Distribution(np.ones(1))
    if n <= DENSE_LIMIT:
        A = P.T.toarray() - np.eye(n)
        A[-1, :] = 1.0
        b = np.zeros(n)
        b[-1] = 1.0
        x = scipy.linalg.solve(A, b)
        x = np.clip(x, 0.0, None)
        x /= x.sum()
        if _residual(P, x) < tolerance:
            return Distribution(x)
        start = x
    else:
        start = np.full(n, 1.0 / n)
    return Distribution(_damped_iteration(P, start, tolerance))


def _damped_iteration(P: sp.csr_matrix, x: np.ndarray, tolerance: float) -> np.ndarray:
    PT = P.T.tocsr()
    x = x.copy()
    res = np.inf
    for it in range(MAX_ITERATIONS):
        y = PT @ x
        res = float(np.max(np.abs(y - x)))
        if res < tolerance:
            return x / x.sum()
        x = 0.5 * (x + y)
        if it % 1024 == 1023:
            x /= x.sum()
    raise ChainError(f"stationary iteration budget exhausted; residual {res:.3e}")


def expected_return_time(chain: Chain, state: int, pi=None) -> float:
    pi = stationary(chain) if pi is None else pi
    return 1.0 / float(_vector(pi)[state])


def _reachable(G: sp.csr_matrix, sources: Iterable[int]) -> np.ndarray:
    seen = np.zeros(G.shape[0], dtype=bool)
    for s in sources:
        if not seen[s]:
            seen[csgraph.breadth_first_order(G, s, directed=True, return_predecessors=False)] = True
    return seen


def expected_hitting_time(chain: Chain, source: int, target: int) -> float:
    """E[min{t >= 1 : X_t = target} | X_0 = source] by first-step analysis.

    With ``source == target`` this is the expected return time.
    """
    _require_valid(chain)
    n = chain.num_states
    G = _graph(chain).tolil()
    succ = list(G.rows[target])
    G[target, :] = 0
    G = G.tocsr()
    starts = succ if source == target else [source]
    region = _reachable(G, starts)
    can_reach = _reachable(_graph(chain).T.tocsr(), [target])
    if np.any(region & ~can_reach):
        raise ChainError(f"infinite hitting time from {source} to {target}")
    region[target] = False
    idx = np.flatnonzero(region)
    P = chain.matrix
    h = np.zeros(n)
    if len(idx):
        sub = P[idx][:, idx]
        A = sp.identity(len(idx), format="csc") - sub.tocsc()
        if len(idx) <= DENSE_LIMIT:
            h[idx] = scipy.linalg.solve(A.toarray(), np.ones(len(idx)))
        else:
            h[idx] = spla.spsolve(A, np.ones(len(idx)))
    if source != target:
        return float(h[source])
    row = P.getrow(target)
    return float(1.0 + row.dot(h)[0])


@dataclass(frozen=True, eq=False)
class FlowMatrix:
    """Ergodic flow ``Q_ij = pi_i * p_ij`` on the support of a chain."""

    num_states: int
    rows: np.ndarray
    cols: np.ndarray
    values: np.ndarray

    def __getitem__(self, edge: tuple[int, int]) -> float:
        i, j = edge
        hit = np.flatnonzero((self.rows == i) & (self.cols == j))
        return float(self.values[hit].sum())

    def outflow(self) -> np.ndarray:
        return np.bincount(self.rows, weights=self.values, minlength=self.num_states)

    def inflow(self) -> np.ndarray:
        return np.bincount(self.cols, weights=self.values, minlength=self.num_states)

    @property
    def total(self) -> float:
        return float(self.values.sum())

    def as_dict(self) -> dict[tuple[int, int], float]:
        return {(int(i), int(j)): float(v) for i, j, v in zip(self.rows, self.cols, self.values)}


def ergodic_flow(chain: Chain, pi) -> FlowMatrix:
    p = _vector(pi)
    if len(p) != chain.num_states:
        raise ChainError("distribution length does not match the chain")
    return FlowMatrix(chain.num_states, chain.rows, chain.cols, p[chain.rows] * chain.probabilities)


class EventRate(NamedTuple):
    mu: float
    latency: float


def event_rate(chain: Chain, pi) -> EventRate:
    """Stationary probability that a step traverses an event edge, and the
    mean number of steps between events (its inverse)."""
    if not chain.event_mask.any():
        raise ChainError("chain has no event edges")
    p = _vector(pi)
    if len(p) != chain.num_states:
        raise ChainError("distribution length does not match the chain")
    m = chain.event_mask
    mu = float(np.sum(p[chain.rows[m]] * chain.probabilities[m]))
    return EventRate(mu, 1.0 / mu)


def event_successor_distribution(chain: Chain, pi) -> np.ndarray:
    """Distribution of the state entered by an event step, in stationarity."""
    p = _vector(pi)
    m = chain.event_mask
    w = np.bincount(chain.cols[m], weights=p[chain.rows[m]] * chain.probabilities[m], minlength=chain.num_states)
    return w / w.sum()


def sample_event_gaps(chain: Chain, steps: int, seed: int, start: int = 0) -> np.ndarray:
    """Random walk of ``steps`` transitions; returns the gaps (in steps)
    between consecutive event-edge traversals."""
    from lockfree_markov import _kernels

    # triplets are sorted row-major, so they already form CSR order
    indptr = np.zeros(chain.num_states + 1, dtype=np.int64)
    np.cumsum(np.bincount(chain.rows, minlength=chain.num_states), out=indptr[1:])
    probs = chain.probabilities
    cum = np.empty_like(probs)
    for i in range(chain.num_states):
        lo, hi = indptr[i], indptr[i + 1]
        cum[lo:hi] = np.cumsum(probs[lo:hi])
        cum[hi - 1] = 1.0
    times = _kernels.walk_events(
        indptr, chain.cols, cum, chain.event_mask, start, steps, _kernels.stream_key(seed)
    )
    return np.diff(times)
