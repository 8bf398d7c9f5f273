"""Exception hierarchy.

Flagged outcomes (non-convergence, a search that could not beat its trial points)
are not exceptions; they travel on the result objects.
"""

from __future__ import annotations

from typing import Any


class SpsError(Exception):
    """Base class for every error raised by sps_grf."""


class InvalidParameterError(SpsError, ValueError):
    """A parameter is outside its admissible set."""


class DimensionMismatchError(SpsError, ValueError):
    """Array shapes do not agree."""


class DuplicateLocationError(SpsError, ValueError):
    """Two locations coincide exactly."""


class FactorizationError(SpsError, ArithmeticError):
    """A symmetric positive-definite factorization failed."""


class SegmentationError(SpsError, ValueError):
    """A segmentation plan is malformed or cannot be built."""


class ConfigError(SpsError, ValueError):
    """A run config or block spec could not be parsed."""


class BenchmarkAborted(SpsError):
    """A replicate failed; `partial` holds the rows completed before it."""

    def __init__(self, message: str, partial: Any = None):
        super().__init__(message)
        self.partial = partial
