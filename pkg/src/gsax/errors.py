"""Exception types shared across the package."""


class GsaxError(Exception):
    """Base class for all gsax errors."""


class InvalidParameterError(GsaxError, ValueError):
    """An argument violates a documented precondition."""


class DuplicateInputError(InvalidParameterError):
    """Training inputs contain (near-)duplicate rows."""


class ConditioningError(GsaxError):
    """A matrix could not be factorized even after jitter escalation."""


class FitError(GsaxError):
    """Hyperparameter optimization failed to converge.

    Carries the best model found so far in ``best_model`` so callers can
    decide whether to proceed with it.
    """

    def __init__(self, message, best_model=None):
        super().__init__(message)
        self.best_model = best_model


class DegenerateVarianceError(GsaxError):
    """The total-variance denominator is (numerically) zero."""


class SelectionError(GsaxError):
    """No candidate produced a finite acquisition score."""


class AlignmentError(GsaxError):
    """Traces to be aggregated do not share a common sample grid."""
