"""Exception types shared across the package.

Every error raised on purpose derives from GanfolioError so the CLI can
map failures to exit codes without matching on message text.
"""


class GanfolioError(Exception):
    """Base class for all package errors."""


class ShapeError(GanfolioError):
    """An input or gradient does not match the declared layer shapes."""


class CacheError(GanfolioError):
    """A backward pass was given a cache from a different forward pass."""


class NumericError(GanfolioError):
    """A non-finite value appeared where finite numbers are required."""


class DataError(GanfolioError):
    """Input data violates a documented contract (bad prices, labels, ...)."""


class ParseError(DataError):
    """A file could not be parsed; message includes the offending line."""


class WindowError(DataError):
    """A feature or label window extends beyond the available history."""


class ParameterError(GanfolioError):
    """A numeric parameter is outside its documented range."""


class ConfigError(GanfolioError):
    """A run configuration is inconsistent or incomplete."""


class DivergenceError(GanfolioError):
    """Training produced a non-finite loss."""

    def __init__(self, message: str, epoch: int | None = None):
        super().__init__(message)
        self.epoch = epoch
