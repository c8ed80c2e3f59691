"""Exception types shared across the package."""


class LoomingError(Exception):
    """Base class for all errors raised by lidar_looming."""


class InvalidInputError(LoomingError, ValueError):
    """An argument violates a documented precondition."""


class UndefinedAtOriginError(LoomingError, ValueError):
    """A quantity that divides by range was requested at zero range."""


class NoFiniteSphereError(LoomingError, ValueError):
    """Zero looming level: the equal-looming locus is the plane t.p = 0."""


class ParseError(LoomingError):
    """Malformed input file. ``where`` holds a byte offset or line number."""

    def __init__(self, message, where=None):
        super().__init__(message)
        self.where = where


class FormatVersionError(ParseError):
    """Grid file carries an unsupported version number."""
