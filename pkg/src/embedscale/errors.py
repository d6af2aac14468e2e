"""
Exception hierarchy for embedscale.
"""

from typing import Optional


class EmbedScaleError(Exception):
    """Base class for all embedscale errors."""


class ParseError(EmbedScaleError):
    """A line of an interaction file could not be parsed."""

    def __init__(self, message: str, line_no: Optional[int] = None, path: Optional[str] = None):
        self.line_no = line_no
        self.path = path
        where = f"{path or '<input>'}:{line_no}: " if line_no is not None else ""
        super().__init__(f"{where}{message}")


class EmptyDatasetError(EmbedScaleError):
    """An interaction source contained no interactions."""


class ConfigError(EmbedScaleError, ValueError):
    """A configuration value is out of its valid range."""


class ShapeError(EmbedScaleError, ValueError):
    """Array shapes do not conform."""


class NoNegativeError(EmbedScaleError):
    """A user has interacted with every item, so no negative exists."""


class CapacityError(EmbedScaleError):
    """Not enough unobserved user-item pairs to inject the requested noise."""


class GraphTooLargeError(EmbedScaleError):
    """Graph exceeds the dense eigendecomposition limit."""


class DegenerateEmbeddingError(EmbedScaleError):
    """An embedding row has zero norm where a direction is required."""


class NumericError(EmbedScaleError, ArithmeticError):
    """A non-finite value appeared in a loss, gradient or update."""


class UndefinedMetricError(EmbedScaleError):
    """A metric was requested for an input where it is undefined."""


class RankError(EmbedScaleError):
    """A matrix has lower numerical rank than required."""


class InsufficientDataError(EmbedScaleError):
    """Too few points to perform the requested analysis."""
