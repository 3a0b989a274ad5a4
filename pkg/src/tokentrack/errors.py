"""Exception hierarchy shared across the package."""


class TokenTrackError(Exception):
    """Base class for all library errors."""


class ConfigurationError(TokenTrackError):
    """A config object violates its invariants."""


class RangeError(TokenTrackError):
    """An index or coordinate is outside its legal range."""


class EncodingError(TokenTrackError):
    """An annotation cannot be turned into tokens."""


class ContractViolation(TokenTrackError):
    """Shapes or ids handed between modules do not match the agreed contract."""


class DataError(TokenTrackError):
    """An on-disk dataset or dump file is malformed."""


class NumericError(TokenTrackError):
    """Training produced a non-finite value."""


class DegenerateInputWarning(UserWarning):
    """Raised as a warning when inputs are clamped instead of rejected."""
