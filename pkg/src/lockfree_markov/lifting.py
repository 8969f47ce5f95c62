"""Numeric verification that one chain is a lifting of another.

A map ``f`` from fine states to coarse states is a lifting when the ergodic
flows aggregate exactly: ``Q[i, j] = sum(Q'[x, y] for f(x) = i, f(y) = j)``.
The coarse chain is never derived from the map; both chains come from their
own builders and the map is checked against them.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Any, Sequence

import numpy as np

from lockfree_markov.markov import (
    Chain,
    ChainError,
    Distribution,
    _vector,
    ergodic_flow,
    is_irreducible,
    stationary,
)


@dataclass(frozen=True, eq=False)
class LiftingMap:
    fine_to_coarse: np.ndarray
    num_coarse: int

    @classmethod
    def from_array(cls, fine_to_coarse: Sequence[int], num_coarse: int | None = None) -> LiftingMap:
        arr = np.asarray(fine_to_coarse, dtype=np.int64)
        if arr.ndim != 1 or len(arr) == 0:
            raise ChainError("lifting map must be a non-empty vector")
        if arr.min() < 0:
            raise ChainError("lifting map must be total")
        if num_coarse is None:
            num_coarse = int(arr.max()) + 1
        if arr.max() >= num_coarse:
            raise ChainError("lifting map points outside the coarse state range")
        hit = np.bincount(arr, minlength=num_coarse)
        if np.any(hit == 0):
            raise ChainError(f"lifting map is not surjective: coarse state {int(np.argmin(hit))} has an empty fiber")
        return cls(arr, int(num_coarse))

    @property
    def num_fine(self) -> int:
        return len(self.fine_to_coarse)

    def fiber(self, coarse: int) -> np.ndarray:
        return np.flatnonzero(self.fine_to_coarse == coarse)

    @property
    def fibers(self) -> list[np.ndarray]:
        order = np.argsort(self.fine_to_coarse, kind="stable")
        bounds = np.searchsorted(self.fine_to_coarse[order], np.arange(self.num_coarse + 1))
        return [order[bounds[k]:bounds[k + 1]] for k in range(self.num_coarse)]

    def fiber_sizes(self) -> np.ndarray:
        return np.bincount(self.fine_to_coarse, minlength=self.num_coarse)

    def swapped(self, x: int, y: int) -> LiftingMap:
        """Copy with the images of fine states ``x`` and ``y`` exchanged."""
        arr = self.fine_to_coarse.copy()
        arr[x], arr[y] = arr[y], arr[x]
        return LiftingMap(arr, self.num_coarse)

    def to_dict(self) -> dict[str, Any]:
        return {
            "format": "lockfree-markov.lifting-map/1",
            "num_coarse": self.num_coarse,
            "fine_to_coarse": self.fine_to_coarse.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> LiftingMap:
        return cls.from_array(data["fine_to_coarse"], data.get("num_coarse"))


@dataclass
class LiftingReport:
    flow_homomorphism_ok: bool
    max_flow_residual: float
    aggregation_ok: bool
    max_aggregation_residual: float
    fiber_symmetry_ok: bool
    max_fiber_spread: float
    tolerance: float

    @property
    def ok(self) -> bool:
        # fiber symmetry is reported but is not part of the lifting condition
        return self.flow_homomorphism_ok and self.aggregation_ok

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["ok"] = self.ok
        return d


def _check_map(fine: Chain, coarse: Chain, fmap: LiftingMap) -> None:
    if fmap.num_fine != fine.num_states:
        raise ChainError("lifting map length does not match the fine chain")
    if fmap.num_coarse != coarse.num_states:
        raise ChainError("lifting map range does not match the coarse chain")
    if np.any(fmap.fiber_sizes() == 0):
        raise ChainError("lifting map is not surjective")


def aggregate_flow(fine: Chain, fine_pi, fmap: LiftingMap) -> dict[tuple[int, int], float]:
    q = ergodic_flow(fine, fine_pi)
    ci = fmap.fine_to_coarse[q.rows]
    cj = fmap.fine_to_coarse[q.cols]
    key = ci * fmap.num_coarse + cj
    uniq, inv = np.unique(key, return_inverse=True)
    sums = np.bincount(inv, weights=q.values)
    return {(int(k // fmap.num_coarse), int(k % fmap.num_coarse)): float(v) for k, v in zip(uniq, sums)}


def flow_residual(fine: Chain, coarse: Chain, fmap: LiftingMap, fine_pi=None, coarse_pi=None) -> float:
    fine_pi = stationary(fine) if fine_pi is None else fine_pi
    coarse_pi = stationary(coarse) if coarse_pi is None else coarse_pi
    lifted = aggregate_flow(fine, fine_pi, fmap)
    direct = ergodic_flow(coarse, coarse_pi).as_dict()
    keys = lifted.keys() | direct.keys()
    return max(abs(lifted.get(k, 0.0) - direct.get(k, 0.0)) for k in keys)


def aggregate_distribution(fine_pi, fmap: LiftingMap) -> Distribution:
    p = _vector(fine_pi)
    if len(p) != fmap.num_fine:
        raise ChainError("distribution length does not match the lifting map")
    return Distribution(np.bincount(fmap.fine_to_coarse, weights=p, minlength=fmap.num_coarse))


def _fiber_spread(pi: np.ndarray, fmap: LiftingMap) -> float:
    hi = np.full(fmap.num_coarse, -np.inf)
    lo = np.full(fmap.num_coarse, np.inf)
    np.maximum.at(hi, fmap.fine_to_coarse, pi)
    np.minimum.at(lo, fmap.fine_to_coarse, pi)
    return float(np.max(hi - lo))


def check_fiber_symmetry(fine: Chain, fmap: LiftingMap, tol: float = 1e-9, fine_pi=None) -> tuple[bool, float]:
    """Whether stationary mass is constant on every fiber, and the largest
    max-minus-min spread found."""
    if fmap.num_fine != fine.num_states:
        raise ChainError("lifting map length does not match the fine chain")
    pi = _vector(stationary(fine) if fine_pi is None else fine_pi)
    spread = _fiber_spread(pi, fmap)
    return spread < tol, spread


def verify_lifting(fine: Chain, coarse: Chain, fmap: LiftingMap, tol: float = 1e-9) -> LiftingReport:
    """Check the flow homomorphism, stationary aggregation and fiber symmetry.

    Both chains must be irreducible; periodicity is allowed since the
    stationary distribution is still unique.
    """
    _check_map(fine, coarse, fmap)
    for label, chain in (("fine", fine), ("coarse", coarse)):
        if not is_irreducible(chain):
            raise ChainError(f"{label} chain is not irreducible")
    fine_pi = stationary(fine)
    coarse_pi = stationary(coarse)
    flow_res = flow_residual(fine, coarse, fmap, fine_pi, coarse_pi)
    agg = aggregate_distribution(fine_pi, fmap).probabilities
    agg_res = float(np.max(np.abs(agg - coarse_pi.probabilities)))
    spread = _fiber_spread(fine_pi.probabilities, fmap)
    return LiftingReport(
        flow_homomorphism_ok=flow_res < tol,
        max_flow_residual=flow_res,
        aggregation_ok=agg_res < tol,
        max_aggregation_residual=agg_res,
        fiber_symmetry_ok=spread < tol,
        max_fiber_spread=spread,
        tolerance=tol,
    )
