"""
Exception hierarchy for solver failures.
"""

from typing import Optional


class TikhonovLabError(Exception):
    """Base class for all lab errors."""


class DimensionMismatchError(TikhonovLabError, ValueError):
    """Array shapes do not match the grids they are used with."""


class LinearSolveError(TikhonovLabError):
    """A sparse SPD solve failed (singular matrix, no convergence, residual too large)."""

    def __init__(self, message: str, residual: Optional[float] = None):
        super().__init__(message)
        self.residual = residual


class ConvergenceError(TikhonovLabError):
    """The fixed-point iteration exhausted its iteration budget."""

    def __init__(self, message: str, iterations: int, last_difference: float):
        super().__init__(message)
        self.iterations = iterations
        self.last_difference = last_difference
