"""Exception types raised across the package."""


class GpForecastError(Exception):
    """Base class for all package errors."""


class FactorizationFailure(GpForecastError, ArithmeticError):
    """Regularized Gram matrix stayed non positive definite after jitter escalation."""


class OptimizationDiverged(GpForecastError, ArithmeticError):
    """Every probed hyperparameter setting failed to factorize."""


class InsufficientPrefix(GpForecastError, ValueError):
    """Observed prefix is too short for the requested forecaster."""


class DuplicateManeuver(GpForecastError, KeyError):
    """A maneuver with the same id is already in the bank."""


class FormatError(GpForecastError, ValueError):
    """Input file is empty or its header/delimiter cannot be read."""


class TooManyBadRows(GpForecastError, ValueError):
    """More than the tolerated fraction of lines failed to parse."""


class EmptyInput(GpForecastError, ValueError):
    """An aggregation received no values."""
