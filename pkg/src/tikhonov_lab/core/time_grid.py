"""
Time partitions, piecewise-linear time functions and quadrature against
the temporal basis (hats on nodes, characteristic functions on intervals).
"""

import logging
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Tuple

import numpy as np
from numpy.polynomial.legendre import leggauss

from tikhonov_lab.core.errors import DimensionMismatchError

logger = logging.getLogger(__name__)

TimeFunction = Callable[[np.ndarray], np.ndarray]

BASES = ("hat", "char")


@lru_cache(maxsize=16)
def _reference_rule(order: int) -> Tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre rule mapped to [0, 1]."""
    x, w = leggauss(order)
    return (x + 1.0) / 2.0, w / 2.0


@dataclass(frozen=True)
class TimePartition:
    """0 = t_0 < t_1 < ... < t_M = T_e."""

    nodes: np.ndarray

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        if nodes.ndim != 1 or nodes.size < 2:
            raise ValueError("a partition needs at least two nodes")
        if nodes[0] != 0.0:
            raise ValueError(f"partition must start at 0, got {nodes[0]}")
        if np.any(np.diff(nodes) <= 0):
            raise ValueError("partition nodes must be strictly increasing")
        object.__setattr__(self, "nodes", nodes)
        if self.k >= 1.0:
            logger.warning("Largest time step is not below 1", extra={"k": self.k})

    @property
    def M(self) -> int:
        return self.nodes.size - 1

    @property
    def end_time(self) -> float:
        return float(self.nodes[-1])

    @property
    def steps(self) -> np.ndarray:
        """Interval lengths k_1..k_M."""
        return np.diff(self.nodes)

    @property
    def k(self) -> float:
        return float(self.steps.max())

    @property
    def midpoints(self) -> np.ndarray:
        """Dual nodes t*_m = (t_{m-1} + t_m) / 2."""
        return (self.nodes[:-1] + self.nodes[1:]) / 2.0

    def gauss_points(self, order: int = 3) -> Tuple[np.ndarray, np.ndarray]:
        """Per-interval Gauss points and weights, both of shape (M, order)."""
        if order < 2:
            raise ValueError(f"Gauss order must be at least 2, got {order}")
        s, w = _reference_rule(order)
        points = self.nodes[:-1, None] + self.steps[:, None] * s[None, :]
        weights = self.steps[:, None] * w[None, :]
        return points, weights


@dataclass(frozen=True)
class PiecewiseLinearScalar:
    """Continuous piecewise-linear function of time given by its nodal values."""

    values: np.ndarray
    partition: TimePartition

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape != (self.partition.M + 1,):
            raise DimensionMismatchError(
                f"expected {self.partition.M + 1} nodal values, got {values.shape}"
            )
        object.__setattr__(self, "values", values)

    def __call__(self, t):
        return np.interp(t, self.partition.nodes, self.values)

    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.values)))


def build_uniform_partition(M: int, T_e: float) -> TimePartition:
    if M < 1:
        raise ValueError(f"M must be at least 1, got {M}")
    if T_e <= 0:
        raise ValueError(f"T_e must be positive, got {T_e}")
    nodes = T_e * np.arange(M + 1) / M
    nodes[-1] = T_e
    return TimePartition(nodes)


def hat_weights(f: TimeFunction, partition: TimePartition, order: int = 3) -> np.ndarray:
    """Integrals of f against every hat function phi_0..phi_M."""
    points, weights = partition.gauss_points(order)
    s, _ = _reference_rule(order)
    fw = np.asarray(f(points), dtype=float) * weights
    out = np.zeros(partition.M + 1)
    out[:-1] += fw @ (1.0 - s)
    out[1:] += fw @ s
    return out


def char_weights(f: TimeFunction, partition: TimePartition, order: int = 3) -> np.ndarray:
    """Integrals of f over each interval I_1..I_M."""
    points, weights = partition.gauss_points(order)
    return (np.asarray(f(points), dtype=float) * weights).sum(axis=1)


def quad_against_basis(f: TimeFunction, partition: TimePartition, basis: str, index: int,
                       order: int = 3) -> float:
    """
    Integral of f times a single temporal basis function.

    basis="hat" uses phi_index, index in 0..M (support I_index and I_index+1);
    basis="char" uses the characteristic function of I_index, index in 1..M.
    """
    M = partition.M
    if basis == "hat":
        if not 0 <= index <= M:
            raise ValueError(f"hat index must lie in 0..{M}, got {index}")
    elif basis == "char":
        if not 1 <= index <= M:
            raise ValueError(f"char index must lie in 1..{M}, got {index}")
    else:
        raise ValueError(f"basis must be one of {BASES}, got {basis!r}")

    s, w = _reference_rule(order)
    t = partition.nodes
    total = 0.0
    if basis == "char":
        k = t[index] - t[index - 1]
        return float(np.sum(f(t[index - 1] + k * s) * w) * k)

    if index >= 1:  # rising part on I_index
        k = t[index] - t[index - 1]
        total += np.sum(f(t[index - 1] + k * s) * s * w) * k
    if index <= M - 1:  # falling part on I_index+1
        k = t[index + 1] - t[index]
        total += np.sum(f(t[index] + k * s) * (1.0 - s) * w) * k
    return float(total)
