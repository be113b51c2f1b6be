"""Shared exception types.

Every error raised by this package derives from JetdynError so callers can
catch the whole family at once.  Errors that carry useful doing-something-
about-it context (row numbers, offending indices) expose it as attributes.
"""


class JetdynError(Exception):
    """Base class for all jetdyn errors."""


class ShapeMismatch(JetdynError):
    """Array arguments have inconsistent shapes or lengths."""


class InvalidValue(JetdynError):
    """A scalar argument is outside its documented domain."""


class NoEquilibriumInBracket(JetdynError):
    """Steady-state solve found no sign change inside the search bracket."""


class NonFiniteState(JetdynError):
    """Integration or filtering produced a NaN or infinite state."""

    def __init__(self, message: str, index: int | None = None):
        super().__init__(message)
        self.index = index


class EmptySpec(JetdynError):
    """An excitation or reference spec contains no segments."""


class MissingDerivatives(JetdynError):
    """A dataset lacks the derivative columns the operation requires."""


class WindowTooLarge(JetdynError):
    """Smoothing window exceeds the available number of samples."""


class OrderTooHigh(JetdynError):
    """Polynomial order is incompatible with the smoothing window."""


class SingularInnovation(JetdynError):
    """Innovation covariance is not invertible in a filter update."""


class AllTermsEliminated(JetdynError):
    """Sequential thresholding removed every candidate term."""


class RankDeficientRegressor(JetdynError):
    """Regression matrix does not have full column rank."""


class DivergenceDetected(JetdynError):
    """Iterative identification blew up instead of converging."""


class GNearZero(JetdynError):
    """Input gain passed below the invertibility guard; no control authority."""


class GainNotPositive(JetdynError):
    """Controller gains must be strictly positive."""


class InfeasibleEndurance(JetdynError):
    """Requested endurance cannot be met by any finite propellant mass."""


class MalformedFile(JetdynError):
    """A CSV, params or config file failed to parse."""

    def __init__(self, message: str, line: int | None = None):
        super().__init__(message)
        self.line = line


class UnknownKey(MalformedFile):
    """A config file contains a key the target section does not define."""
