"""Exception types raised across the package."""


class StatsolError(Exception):
    pass


class NonFiniteError(StatsolError, FloatingPointError):
    """A solver state became NaN or Inf."""

    def __init__(self, message, sample_index=None, level=None):
        super().__init__(message)
        self.sample_index = sample_index
        self.level = level


class InvalidHurstError(StatsolError, ValueError):
    pass


class SizeMismatchError(StatsolError, ValueError):
    pass


class OffsetNotOnGridError(StatsolError, ValueError):
    pass


class IncompatibleGridsError(StatsolError, ValueError):
    pass


class UnequalSupportError(StatsolError, ValueError):
    pass


class TooLargeError(StatsolError, ValueError):
    pass


class DegenerateInputError(StatsolError, ValueError):
    pass


class InvalidRateError(StatsolError, ValueError):
    pass


class InsufficientSamplesError(StatsolError, ValueError):
    pass


class CacheCorruptError(StatsolError):
    pass


class ConfigInvalidError(StatsolError, ValueError):
    def __init__(self, message, path=""):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path
