"""Exact Markov-chain models and step-level simulation of lock-free
compare-and-swap algorithms under stochastic schedulers."""

__version__ = "0.1.0"

from lockfree_markov.markov import (
    Chain,
    ChainError,
    Distribution,
    FlowMatrix,
    ValidationReport,
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
from lockfree_markov.lifting import (
    LiftingMap,
    LiftingReport,
    aggregate_distribution,
    check_fiber_symmetry,
    verify_lifting,
)

__all__ = [
    "Chain",
    "ChainError",
    "Distribution",
    "FlowMatrix",
    "LiftingMap",
    "LiftingReport",
    "ValidationReport",
    "aggregate_distribution",
    "check_fiber_symmetry",
    "ergodic_flow",
    "event_rate",
    "expected_hitting_time",
    "expected_return_time",
    "is_ergodic",
    "is_irreducible",
    "period",
    "stationary",
    "validate",
    "verify_lifting",
]
