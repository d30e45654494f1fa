"""Exception hierarchy shared across the package.

Every error carries a stable ``code`` string (used in machine-readable CLI
output) and an ``exit_code`` (2 = rejected input, 3 = numerical failure).
"""


class MmisqError(Exception):
    """Base class for package-specific errors."""

    code = "Error"
    exit_code = 2


class NonGeneratorError(MmisqError):
    """Q has negative off-diagonal entries or row sums away from zero."""

    code = "NonGenerator"


class ReducibleError(MmisqError):
    """The background chain is not a single communicating class."""

    code = "Reducible"


class NonpositiveServiceError(MmisqError):
    """Some service rate is zero or negative."""

    code = "NonpositiveService"


class SingularError(MmisqError):
    """A linear solve failed unexpectedly."""

    code = "Singular"
    exit_code = 3


class TieUnresolvedError(MmisqError):
    """Two distinct states share the extremal envelope on an interval."""

    code = "TieUnresolved"


class NotRegularError(MmisqError):
    """A transition rate along the extremal path is zero, so the
    boundary-layer prefactors are not available."""

    code = "NotRegular"


class UnsupportedDegeneracyError(MmisqError):
    """Duplicate-state configuration beyond the single-partner case."""

    code = "UnsupportedDegeneracy"


class CFLViolationError(MmisqError):
    """Requested time step count violates the CFL stability limit."""

    code = "CFLViolation"


class DomainTooSmallError(MmisqError):
    """The requested grid does not cover the support of the solution."""

    code = "DomainTooSmall"


class OutOfGridError(MmisqError):
    """Query point lies outside the computed grid."""

    code = "OutOfGrid"


class NonpositiveInputError(MmisqError):
    """Rate-function arguments must be strictly positive."""

    code = "NonpositiveInput"


class NotRareRangeError(MmisqError):
    """Exceedance level lies inside the attainable parameter range."""

    code = "NotRareRange"


class OutOfRangeError(MmisqError):
    """Level lies outside the attainable parameter range."""

    code = "OutOfRange"


class InvalidWindowsError(MmisqError):
    """Importance-sampling windows violate the spacing requirements."""

    code = "InvalidWindows"


class DZeroError(MmisqError):
    """The extremal path has no switches; the tilted estimator does not
    apply and the plain conditional estimator should be used instead."""

    code = "DZero"


class BracketFailureError(MmisqError):
    """Capacity search bracket does not contain the target level."""

    code = "BracketFailure"
    exit_code = 3
