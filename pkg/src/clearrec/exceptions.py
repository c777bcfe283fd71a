"""Exception hierarchy shared across the package."""


class ClearError(Exception):
    """Base class for all errors raised by clearrec."""


class InvalidInputError(ClearError, ValueError):
    """Input is empty, non-finite or otherwise unusable."""


class DimensionError(ClearError, ValueError):
    """Shapes of two or more inputs do not agree."""


class InvalidRankError(ClearError, ValueError):
    pass


class InvalidStrengthError(ClearError, ValueError):
    pass


class FormatError(ClearError, ValueError):
    """A binary matrix, checkpoint or text file could not be parsed."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class ConfigError(ClearError, ValueError):
    pass


class NumericalAbort(ClearError, FloatingPointError):
    """Training produced a non-finite loss.

    ``dump`` carries the epoch, batch index and parameter norms at the
    point of failure.
    """

    def __init__(self, message, dump=None):
        super().__init__(message)
        self.dump = dump or {}
