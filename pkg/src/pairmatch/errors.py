"""Exception hierarchy shared by every module.

The CLI maps these to exit codes: ``ConfigError`` -> 2, ``FeasibilityError`` -> 3,
``InvariantViolation`` -> 4.
"""

from __future__ import annotations


class PairMatchError(Exception):
    """Base class for all package errors."""


class InvalidParamsError(PairMatchError, ValueError):
    """Model or algorithm parameters outside their admissible range."""


class InvalidPairError(PairMatchError, ValueError):
    """Self-loop or out-of-range node in a query."""


class ConstraintViolation(PairMatchError):
    """A query would break one of the sampling constraints."""


class NRViolation(ConstraintViolation):
    """Pair already sampled (non-redundancy)."""


class SpSViolation(ConstraintViolation):
    """Node would exceed its per-node query cap (sparse sampling)."""


class BudgetExhausted(ConstraintViolation):
    """Horizon T already reached."""


class FeasibilityError(PairMatchError):
    """The requested run cannot fit in the available nodes or budget.

    ``partial`` optionally carries whatever was produced before the failure
    (e.g. the ledger of a doubling run whose node supply ran out).
    """

    def __init__(self, message: str, partial: object | None = None) -> None:
        super().__init__(message)
        self.partial = partial


class DegenerateInputError(PairMatchError):
    """Input graph carries no usable signal (no edges, empty kernel...)."""


class NoDetectionError(PairMatchError):
    """The s-estimation heuristic never crossed its detection threshold."""

    def __init__(self, message: str, queries_used: int) -> None:
        super().__init__(message)
        self.queries_used = queries_used


class InsufficientDataError(PairMatchError):
    """Too few usable points for a fit."""


class ConfigError(PairMatchError):
    """Malformed or inconsistent experiment configuration."""


class InvariantViolation(PairMatchError, AssertionError):
    """A ledger invariant failed when re-checked after a run."""
