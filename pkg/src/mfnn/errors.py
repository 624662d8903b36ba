"""Exception hierarchy shared by every module."""


class MfnnError(Exception):
    """Base class for all errors raised by the package."""


class ShapeError(MfnnError, ValueError):
    """A tensor does not satisfy an operation's shape contract."""

    def __init__(self, where, expected, got):
        self.where = where
        self.expected = expected
        self.got = got
        super().__init__(f"{where}: expected {expected}, got {got}")


class ConfigError(MfnnError, ValueError):
    """Invalid configuration or argument value."""


class NumericError(MfnnError, ArithmeticError):
    """Non-finite values appeared where finite ones are required."""


class FormatError(MfnnError, ValueError):
    """A file on disk does not match its container format."""
