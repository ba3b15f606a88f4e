"""Exception types shared across the package."""


class LSCError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(LSCError, ValueError):
    """Shapes do not agree with what an operation needs."""


class NumericalError(LSCError, ArithmeticError):
    """An iterative routine failed or produced non-finite values."""

    def __init__(self, message: str, iterations: int | None = None, where=None):
        super().__init__(message)
        self.iterations = iterations
        self.where = where


class ConfigError(LSCError, ValueError):
    """A configuration is malformed or inconsistent."""


class SizeError(LSCError, OverflowError):
    """A brute-force enumeration would exceed its guard."""


class StatisticsError(LSCError, ValueError):
    """Not enough samples for a statistic."""


class PreconditionError(LSCError, RuntimeError):
    """A required earlier stage did not complete (e.g. pre-training)."""


class DegenerateRadiusWarning(UserWarning):
    """A spectral radius collapsed to (numerically) zero."""
