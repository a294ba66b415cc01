"""Exception types raised by the calibration pipeline."""


class CalibrationError(Exception):
    """Base class for all gyrocal errors."""


class SingularInputError(CalibrationError):
    """Matrix is numerically singular where full rank is required."""


class InsufficientOverlapError(CalibrationError):
    """The two streams do not share enough common time range."""


class FlatSignalError(CalibrationError):
    """Rate-norm sequence has no variance; cross-correlation is undefined."""


class OutOfRangeError(CalibrationError):
    """Query times fall outside the sampled time range."""


class TooFewSamplesError(CalibrationError):
    """Not enough samples for the requested operation."""


class RankDeficientError(CalibrationError):
    """Measurements do not span 3 d.o.f.; the normal system is singular."""


class IndefiniteNullspaceError(CalibrationError):
    """Null-space vector has mixed signs; data inconsistent with the model."""


class NonPositiveScaleError(CalibrationError):
    """Recovered squared scale factors are not strictly positive."""


class DegenerateRatioError(CalibrationError):
    """Scale ratio is non-positive; global scale cannot be resolved."""


class SingularNormalEquationsError(CalibrationError):
    """Gauss-Newton normal equations are rank deficient."""


class SingularPhiError(CalibrationError):
    """Scale-error recovery system is singular (degenerate placement)."""


class NoConvergenceError(CalibrationError):
    """Iterative solver did not converge within the iteration budget."""


class SingularInformationError(CalibrationError):
    """Rotation information matrix is singular (rates span < 3 d.o.f.)."""


class CsvParseError(CalibrationError):
    """Malformed gyroscope CSV input."""
