"""Typed exceptions shared across the package.

Degenerate statistics raise instead of returning 0 or NaN so that
simulation code can count them explicitly.
"""


class SpreadometerError(Exception):
    """Base class for every error raised by this package."""


class SchemaError(SpreadometerError):
    """An input table is missing a required column."""


class ParseError(SpreadometerError):
    """A cell could not be parsed; the message carries the line number."""


class DomainError(SpreadometerError):
    """A value violates its domain (probabilities, sizes, empty samples, ...)."""


class InfeasibleSampleError(SpreadometerError):
    """The requested sample cannot be drawn (n > N, non-integer target size, ...)."""


class ConvergenceError(SpreadometerError):
    """An iterative numerical procedure exhausted its step budget."""


class SaturationError(SpreadometerError):
    """Inhibition placement failed: the window cannot take more points."""


class DegenerateStatisticError(SpreadometerError):
    """An index is undefined for this input."""


class ConstantValuesError(DegenerateStatisticError):
    """The variable is constant (on the weighted support); zero variance."""


class ConstantIndicatorError(ConstantValuesError):
    """The sample indicator is constant: empty or exhaustive sample."""


class ZeroTotalWeightError(DegenerateStatisticError):
    """The spatial weights matrix has zero total weight."""


class ConstantLocalMeansError(DegenerateStatisticError):
    """All neighbourhood means coincide; the correlation denominator vanishes."""
