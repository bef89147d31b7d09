"""Exception hierarchy shared by the library and the CLI.

Every error carries an ``exit_code`` so the command-line front end can map
failures onto stable process exit statuses.
"""


class LgmEmgError(Exception):
    exit_code = 1


class ConfigError(LgmEmgError, ValueError):
    """Bad configuration, unknown format, or missing required settings."""

    exit_code = 2


class DataError(LgmEmgError, ValueError):
    exit_code = 3


class ParseError(DataError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class DegenerateDataError(DataError):
    """Input has no usable spread (all samples identical, zero baseline...)."""


class NoActivityError(DataError):
    pass


class BoundsError(DataError, IndexError):
    pass


class ShapeError(DataError):
    pass


class DomainError(DataError):
    pass


class EmptyResultError(DataError):
    pass


class FitError(LgmEmgError, RuntimeError):
    exit_code = 4


class NumericError(FitError):
    """Non-finite value produced during quadrature or likelihood evaluation."""
