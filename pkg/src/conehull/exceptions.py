"""Exception types raised by conehull."""


class ConeHullError(Exception):
    """Base class for all conehull errors."""


class InvalidPlanError(ConeHullError, ValueError):
    """A projection plan is inconsistent with the problem it is applied to."""


class ValidationError(ConeHullError, ValueError):
    """Input data violates a precondition (shape, sign, finiteness)."""


class InsufficientDataError(ValidationError):
    """Too few samples to build the requested reduction."""


class InfeasibleError(ConeHullError):
    """No subset of generators covers the target points."""


class UnderdeterminedError(ConeHullError):
    """Fewer than k candidates received a positive vote.

    The partial result is attached as ``anchor_set`` (and the full vote
    tally as ``tally``) so callers can still inspect it.
    """

    def __init__(self, message, anchor_set=None, tally=None, results=None):
        super().__init__(message)
        self.anchor_set = anchor_set
        self.tally = tally
        self.results = results


class NonIdentifiableError(ConeHullError):
    """The rank-one factors cannot be separated (repeated eigenvalues)."""


class RankDeficientError(ConeHullError):
    """A matrix that must have full column rank does not."""

    def __init__(self, message, condition_number=float("inf")):
        super().__init__(message)
        self.condition_number = condition_number


class MatrixFormatError(ConeHullError):
    """A matrix file could not be parsed."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class DuplicateRayWarning(UserWarning):
    """Two generator rows point along the same ray."""


class DegenerateClusteringWarning(UserWarning):
    """Mean shift found a single cluster in every sub-problem."""
