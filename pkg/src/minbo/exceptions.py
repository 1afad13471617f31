"""Errors and warnings shared across the package."""


class MinboError(Exception):
    """Base class for all package-specific errors."""


class NotPositiveDefinite(MinboError):
    """Cholesky pivot at or below tolerance; the moment matrix is singular."""


class OutOfRange(MinboError):
    """Argument outside its mathematical domain."""


class DimensionMismatch(MinboError):
    """Array shapes do not conform."""


class HullViolation(MinboError):
    """Zero is not inside the convex hull of the constraint rows."""


class NotConverged(MinboError):
    """Iterative solver exhausted its iteration budget."""


class RankDeficient(MinboError):
    """Moment Jacobian lost column rank; the working model is unidentified."""


class Separation(MinboError):
    """Perfect separation: the logistic likelihood has no finite maximizer."""


class InvalidWeights(MinboError):
    """Scheme weight array violates nonnegativity or row-sum-one."""


class DegenerateIIB(MinboError):
    """Every information-borrowing index is numerically zero."""


class LengthMismatch(MinboError):
    """Per-dataset weight vectors differ in length."""


class NonPositiveVariance(MinboError):
    """A variance that must be positive is zero or negative."""


class TooManyFailures(MinboError):
    """More than the tolerated fraction of Monte Carlo replicates failed."""


class UnbalancedLongitudinal(MinboError):
    """A subject has an incomplete block of repeated measurements."""


class UnknownSubject(MinboError):
    """A secondary-file subject id does not appear in the main file."""


class ParseError(MinboError):
    """Malformed configuration or data file."""


class NoInformationWarning(UserWarning):
    """All constraint rows are zero; the fit degenerates to uniform weights."""
