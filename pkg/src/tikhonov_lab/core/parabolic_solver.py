"""
Crank-Nicolson type Petrov-Galerkin solvers for the heat equation.

The state y is piecewise constant in time (one vector per interval I_m),
the adjoint p is continuous piecewise linear (one vector per node t_m).
The adjoint recurrence is the exact transpose of the state recurrence,
so <H, S F> = <S* H, F> holds up to linear-solver accuracy.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np

from tikhonov_lab.core.errors import DimensionMismatchError
from tikhonov_lab.core.mesh_fem import SpaceMesh, SparseOperator, SpdSolver, assemble
from tikhonov_lab.core.time_grid import TimePartition

logger = logging.getLogger(__name__)


def separable_load(weights: np.ndarray, spatial: np.ndarray) -> np.ndarray:
    """Load array (rows = time weights, columns = spatial vector)."""
    return np.outer(np.asarray(weights, dtype=float), np.asarray(spatial, dtype=float))


def _dump(path: Union[str, Path], index: np.ndarray, times: np.ndarray, values: np.ndarray) -> Path:
    path = Path(path)
    header = "m,t," + ",".join(f"v{i}" for i in range(values.shape[1]))
    data = np.column_stack([index, times, values])
    np.savetxt(path, data, delimiter=",", header=header, comments="", fmt="%.16g")
    return path


@dataclass(frozen=True)
class StateTrajectory:
    """y_1..y_M, the value of y_kh on each interval."""

    values: np.ndarray
    partition: TimePartition
    mesh: SpaceMesh

    def l2_norm_sq(self, mass: SparseOperator) -> float:
        """||y||^2 in L2(I, L2(Omega))."""
        my = (mass.matrix @ self.values.T).T
        return float(np.sum(self.partition.steps * np.einsum("mi,mi->m", self.values, my)))

    def to_csv(self, path: Union[str, Path]) -> Path:
        m = np.arange(1, self.partition.M + 1)
        return _dump(path, m, self.partition.midpoints, self.values)


@dataclass(frozen=True)
class AdjointTrajectory:
    """p_0..p_M, nodal-in-time values of p_kh; p_M = 0."""

    values: np.ndarray
    partition: TimePartition
    mesh: SpaceMesh

    def to_csv(self, path: Union[str, Path]) -> Path:
        m = np.arange(self.partition.M + 1)
        return _dump(path, m, self.partition.nodes, self.values)


class ParabolicOperator:
    """Discrete solution operator S_kh of the heat equation and its adjoint."""

    def __init__(self, mesh: SpaceMesh, partition: TimePartition,
                 mass: Optional[SparseOperator] = None,
                 stiffness: Optional[SparseOperator] = None,
                 solver: Optional[SpdSolver] = None,
                 linear_solver: str = "direct",
                 cg_tolerance: float = 1e-13,
                 residual_tolerance: float = 1e-12):
        self.mesh = mesh
        self.partition = partition
        self.mass = mass or assemble(mesh, "mass")
        self.stiffness = stiffness or assemble(mesh, "stiffness")
        if self.mass.dimension != mesh.node_count or self.stiffness.dimension != mesh.node_count:
            raise DimensionMismatchError("operators do not match the mesh")
        self.solver = solver or SpdSolver(
            mesh, self.mass, self.stiffness,
            method=linear_solver, cg_tolerance=cg_tolerance, residual_tolerance=residual_tolerance,
        )
        logger.debug("Parabolic operator ready",
                     extra={"nodes": mesh.node_count, "time_steps": partition.M})

    @property
    def shape(self):
        """(M, N) shape of state loads."""
        return self.partition.M, self.mesh.node_count

    def _check_load(self, load: np.ndarray, name: str) -> np.ndarray:
        load = np.asarray(load, dtype=float)
        if load.shape != self.shape:
            raise DimensionMismatchError(f"{name} load must have shape {self.shape}, got {load.shape}")
        return load

    def _explicit(self, v: np.ndarray, k: float) -> np.ndarray:
        """(M - (k/2) K) v"""
        return self.mass.matrix @ v - 0.5 * k * (self.stiffness.matrix @ v)

    def initial_term(self, y0: Optional[np.ndarray]) -> np.ndarray:
        """M y0 with y0 restricted to X_h0."""
        if y0 is None:
            return np.zeros(self.mesh.node_count)
        y0 = np.asarray(y0, dtype=float)
        if y0.shape != (self.mesh.node_count,):
            raise DimensionMismatchError(f"y0 must have {self.mesh.node_count} values, got {y0.shape}")
        y0 = np.where(self.mesh.boundary_mask, 0.0, y0)
        return self.mass.matrix @ y0

    def solve_state(self, load: np.ndarray, y0: Optional[np.ndarray] = None) -> StateTrajectory:
        """
        Forward recurrence from hats phi_0..phi_{M-1}:
        (M + k_1/2 K) y_1 = M y0 + F_0,
        (M + k_{m+1}/2 K) y_{m+1} = (M - k_m/2 K) y_m + F_m.
        """
        F = self._check_load(load, "state")
        k = self.partition.steps
        y = np.zeros(self.shape)

        y[0] = self.solver.solve(self.initial_term(y0) + F[0], 1.0, 0.5 * k[0])
        for m in range(1, self.partition.M):
            rhs = self._explicit(y[m - 1], k[m - 1]) + F[m]
            y[m] = self.solver.solve(rhs, 1.0, 0.5 * k[m])
        return StateTrajectory(values=y, partition=self.partition, mesh=self.mesh)

    def solve_adjoint(self, load: np.ndarray) -> AdjointTrajectory:
        """
        Backward recurrence with p_M = 0:
        (M + k_m/2 K) p_{m-1} = (M - k_m/2 K) p_m + H_m, m = M..1.
        Row m-1 of load holds H_m.
        """
        H = self._check_load(load, "adjoint")
        k = self.partition.steps
        M = self.partition.M
        p = np.zeros((M + 1, self.mesh.node_count))

        for m in range(M, 0, -1):
            rhs = H[m - 1] if m == M else self._explicit(p[m], k[m - 1]) + H[m - 1]
            p[m - 1] = self.solver.solve(rhs, 1.0, 0.5 * k[m - 1])
        return AdjointTrajectory(values=p, partition=self.partition, mesh=self.mesh)

    def check_adjointness(self, state_load: np.ndarray, adjoint_load: np.ndarray,
                          y0: Optional[np.ndarray] = None) -> float:
        """Relative residual of sum H_m.y_m = (M y0 + F_0).p_0 + sum_{m>=1} F_m.p_m."""
        F = self._check_load(state_load, "state")
        H = self._check_load(adjoint_load, "adjoint")
        y = self.solve_state(F, y0).values
        p = self.solve_adjoint(H).values

        lhs = float(np.sum(H * y))
        first = self.initial_term(y0) + F[0]
        rhs = float(first @ p[0] + np.sum(F[1:] * p[1:self.partition.M]))
        return abs(lhs - rhs) / max(1.0, abs(lhs))
