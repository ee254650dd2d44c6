"""Exception hierarchy shared by every module."""


class LckasrError(Exception):
    """Base class for all library errors."""


class ConfigError(LckasrError, ValueError):
    """Inconsistent shapes, geometry, or model configuration."""


class FormatError(LckasrError, ValueError):
    """Malformed weight file. ``offset`` is the byte position where parsing failed."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class NumericError(LckasrError, ArithmeticError):
    """Non-finite values where finite ones are required."""


class DataError(LckasrError):
    """Dataset or image problems (empty dataset, patch larger than image, unreadable file)."""
