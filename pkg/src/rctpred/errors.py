"""Exception types shared across the package.

Every failure mode that callers are expected to branch on gets its own
class; all of them subclass ValueError so casual callers can catch one
thing. The CLI maps SchemaError/ParseError to usage exit codes and the
rest to computation-failure exit codes.
"""


class RctPredError(ValueError):
    """Base class for all package-specific errors."""


class DomainError(RctPredError):
    """A parameter lies outside its mathematically valid range."""


class UnbalancedDesignError(DomainError):
    """An operation that requires n0 == n1 was given an unbalanced design."""


class InsufficientDataError(RctPredError):
    """Too few rows/units (or degrees of freedom) for the computation."""


class DegenerateReferenceError(RctPredError):
    """A reference population has a zero-variance covariate."""


class SingularMatrixError(RctPredError):
    """A covariance or cross-product matrix is not invertible."""


class InvalidWeightError(RctPredError):
    """A weight vector contains negative entries or has no mass."""


class DegeneratePropensityError(RctPredError):
    """A fitted membership probability of exactly 0 or 1 makes odds undefined."""


class PerfectSeparationError(RctPredError):
    """The selection outcome is perfectly separable; the MLE diverges."""


class ConvergenceError(RctPredError):
    """An iterative fit did not converge within its iteration budget."""


class InfeasibleWorldError(RctPredError):
    """No simulation world is consistent with the requested parameters."""


class SchemaError(RctPredError):
    """An input file does not have the declared columns/header."""


class ParseError(RctPredError):
    """A cell in an input file could not be parsed as a finite number."""
