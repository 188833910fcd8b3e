"""
Problem backends for the regularization solver.
A backend maps a control to q = B*p and owns every control-space inner product,
so the fixed-point solver never sees meshes or time grids.
"""

import logging
from abc import ABC, abstractmethod
from typing import Any, Dict, Optional

import numpy as np

from tikhonov_lab.core.control_space import (
    AdmissibleBox, ImplicitControl, LocatedControlOperator, apply_B_star, band_measure,
    control_derivative_l1, control_error_norms, control_inner, control_load, inactive_measure,
    variational_residual
)
from tikhonov_lab.core.manufactured import ManufacturedProblem, make_located_heat_example
from tikhonov_lab.core.mesh_fem import build_uniform_mesh, interpolate
from tikhonov_lab.core.models import RunConfig
from tikhonov_lab.core.parabolic_solver import ParabolicOperator, StateTrajectory, separable_load
from tikhonov_lab.core.time_grid import (
    PiecewiseLinearScalar, build_uniform_partition, hat_weights
)

logger = logging.getLogger(__name__)


class ProblemBackend(ABC):
    """Abstract base class for problems of the form min 1/2 |S B u - z|^2 + alpha/2 |u|^2 over a box."""

    name: str = "abstract"

    @property
    @abstractmethod
    def box(self) -> AdmissibleBox:
        """Admissible box of the controls."""

    @property
    @abstractmethod
    def domain_measure(self) -> float:
        """Measure of the control domain, so that |b - a|_L1 = (b - a) * domain_measure."""

    @abstractmethod
    def initial_control(self, choice: str) -> Any:
        """
        Constant starting control.

        Args:
            choice: lower, upper or zero

        Returns:
            Control object understood by the other methods
        """

    @abstractmethod
    def evaluate(self, control: Any) -> np.ndarray:
        """
        Solve state and adjoint for a control.

        Args:
            control: Current control

        Returns:
            Values of q = B*p that define the next control
        """

    @abstractmethod
    def control_from_q(self, alpha: float, q: np.ndarray) -> Any:
        """Projection formula u = P(-q / alpha)."""

    @abstractmethod
    def control_inner(self, u: Any, v: Any) -> float:
        """(u, v) in the control space; v may be a control or a constant."""

    @abstractmethod
    def control_distance_sq(self, u: Any, v: Any) -> float:
        """|u - v|^2 in the control space."""

    @abstractmethod
    def vi_residual(self, u: Any, q: np.ndarray, alpha: float, v: float) -> float:
        """(alpha u + q, v - u) for a constant direction v."""

    @abstractmethod
    def state_distance_sq(self, u: Any, v: Any) -> float:
        """|S B (u - v)|^2 in the observation space."""

    @abstractmethod
    def objective(self, u: Any, alpha: float) -> float:
        """Regularized objective, up to an alpha-independent constant."""

    @abstractmethod
    def record_metrics(self, u: Any) -> Dict[str, Optional[float]]:
        """Error and structure quantities stored on a path record."""

    def sup_difference(self, q_new: np.ndarray, q_old: np.ndarray) -> float:
        """Stagnation measure of the fixed-point iteration (sup over time nodes or control points)."""
        return float(np.max(np.abs(q_new - q_old)))

    def describe(self) -> Dict[str, Any]:
        return {"backend": self.name}


class LocatedHeatBackend(ProblemBackend):
    """Heat equation with a time-dependent control acting through a fixed profile g1."""

    name = "located-heat"

    def __init__(self, problem: ManufacturedProblem, operator: ParabolicOperator, gauss_order: int = 3):
        self.problem = problem
        self.operator = operator
        self.gauss_order = gauss_order
        self.partition = operator.partition
        if not np.isclose(self.partition.end_time, problem.end_time):
            raise ValueError(
                f"time grid ends at {self.partition.end_time}, the problem at {problem.end_time}"
            )
        mesh = operator.mesh

        g1 = interpolate(mesh, problem.g1)
        self.control_operator = LocatedControlOperator(operator.mass, g1)
        w = self.control_operator.w
        self.y0 = interpolate(mesh, problem.initial_state)
        self.drift_load = separable_load(
            hat_weights(problem.drift_profile, self.partition, gauss_order)[:-1], w
        )
        # exact int_{I_m} of the y_d time factor, which is unbounded at T_e for kappa > 1
        self.target_weights = problem.target_weights(self.partition)

        points, weights = self.partition.gauss_points(gauss_order)
        profile = problem.state_profile(points)
        self._exact_first = (weights * profile).sum(axis=1)
        self._exact_second = (weights * profile ** 2).sum(axis=1)
        self._g1_mass = float(g1 @ w)

        logger.info(
            "Located-heat backend initialized",
            extra={
                "kappa": problem.kappa,
                "nodes": mesh.node_count,
                "time_steps": self.partition.M,
                "gauss_order": gauss_order,
            }
        )

    @classmethod
    def build(cls, problem: ManufacturedProblem, n_per_side: int, time_steps: int,
              gauss_order: int = 3, linear_solver: str = "direct",
              cg_tolerance: float = 1e-13, residual_tolerance: float = 1e-12) -> "LocatedHeatBackend":
        operator = ParabolicOperator(
            build_uniform_mesh(n_per_side),
            build_uniform_partition(time_steps, problem.end_time),
            linear_solver=linear_solver,
            cg_tolerance=cg_tolerance,
            residual_tolerance=residual_tolerance,
        )
        return cls(problem, operator, gauss_order)

    @property
    def box(self) -> AdmissibleBox:
        return self.problem.box

    @property
    def domain_measure(self) -> float:
        return self.partition.end_time

    def initial_control(self, choice: str) -> ImplicitControl:
        value = {"lower": self.box.lower, "upper": self.box.upper, "zero": 0.0}[choice]
        return ImplicitControl.constant(self.box.project(value), self.partition, self.box)

    def state(self, u: ImplicitControl) -> StateTrajectory:
        load = control_load(u, self.control_operator, self.drift_load)
        return self.operator.solve_state(load, self.y0)

    def evaluate(self, control: ImplicitControl) -> np.ndarray:
        y = self.state(control).values
        mass = self.operator.mass.matrix
        H = (self.partition.steps[:, None] * (mass @ y.T).T
             - np.outer(self.target_weights, self.control_operator.w))
        p = self.operator.solve_adjoint(H)
        return apply_B_star(self.control_operator, p).values

    def control_from_q(self, alpha: float, q: np.ndarray) -> ImplicitControl:
        return ImplicitControl(alpha, PiecewiseLinearScalar(q, self.partition), self.box)

    def control_inner(self, u, v) -> float:
        return control_inner(u, v)

    def control_distance_sq(self, u, v) -> float:
        return control_error_norms(u, v)[1] ** 2

    def vi_residual(self, u, q, alpha, v) -> float:
        return variational_residual(u, PiecewiseLinearScalar(q, self.partition), alpha, v)

    def _mass_norm_sq(self, values: np.ndarray) -> np.ndarray:
        mass = self.operator.mass.matrix
        return np.einsum("mi,mi->m", values, (mass @ values.T).T)

    def state_distance_sq(self, u, v) -> float:
        d = self.state(u).values - self.state(v).values
        return float(np.sum(self.partition.steps * self._mass_norm_sq(d)))

    def objective(self, u, alpha: float) -> float:
        y = self.state(u).values
        tracking = (np.sum(self.partition.steps * self._mass_norm_sq(y))
                    - 2.0 * np.sum(self.target_weights * (y @ self.control_operator.w)))
        return float(0.5 * tracking + 0.5 * alpha * control_inner(u, u))

    def state_error(self, y: np.ndarray) -> float:
        """L2(I, L2) distance between y_kh and the interpolated exact state, Gauss in time."""
        sq = (self._exact_second * self._g1_mass
              - 2.0 * self._exact_first * (y @ self.control_operator.w)
              + self.partition.steps * self._mass_norm_sq(y))
        return float(np.sqrt(max(np.sum(sq), 0.0)))

    def record_metrics(self, u: ImplicitControl) -> Dict[str, Optional[float]]:
        err_l1, err_l2 = control_error_norms(u, self.problem.exact_control)
        return {
            "err_l1": err_l1,
            "err_l2": err_l2,
            "state_error": self.state_error(self.state(u).values),
            "inactive_measure": inactive_measure(u),
            "band_measure": band_measure(u) if self.box.sigma is not None else None,
            "derivative_l1": control_derivative_l1(u),
        }

    def describe(self) -> Dict[str, Any]:
        return {
            "backend": self.name,
            "kappa": self.problem.kappa,
            "nodes": self.operator.mesh.node_count,
            "time_steps": self.partition.M,
        }


class BackendFactory:
    """Factory for creating problem backends."""

    @staticmethod
    def create_backend(config: RunConfig) -> ProblemBackend:
        """
        Create the backend named by the run configuration.

        Args:
            config: Resolved run configuration

        Returns:
            ProblemBackend instance

        Raises:
            ValueError: If the example is not supported
        """
        if config.example == "located-heat":
            return LocatedHeatBackend.build(
                make_located_heat_example(config.kappa, end_time=config.end_time),
                n_per_side=config.n_per_side,
                time_steps=config.time_steps,
                gauss_order=config.gauss_order,
                linear_solver=config.linear_solver,
                cg_tolerance=config.cg_tolerance,
                residual_tolerance=config.residual_tolerance,
            )
        elif config.example == "poisson":
            from tikhonov_lab.services.elliptic_backend import EllipticBackend, make_poisson_example
            mesh = build_uniform_mesh(config.n_per_side)
            problem = make_poisson_example(
                mesh,
                linear_solver=config.linear_solver,
                cg_tolerance=config.cg_tolerance,
                residual_tolerance=config.residual_tolerance,
            )
            return EllipticBackend(problem)
        else:
            raise ValueError(f"Unsupported example: {config.example}")
