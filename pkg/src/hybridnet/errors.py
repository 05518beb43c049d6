"""Exception hierarchy shared by every module."""


class HybridNetError(Exception):
    """Base class for all library errors."""


class InvalidArgument(HybridNetError, ValueError):
    """Inputs violate a documented precondition."""


class NumericFailure(HybridNetError, ArithmeticError):
    """An iterative routine failed to converge or produced non-finite values."""


class FormatError(HybridNetError, ValueError):
    """A file does not follow its byte layout.

    ``offset`` is the byte offset (binary formats) or 1-based line number
    (text formats) where parsing stopped.
    """

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at {offset})"
        super().__init__(message)
        self.offset = offset


class CorruptionError(FormatError):
    """Checksum mismatch in a feature container."""
