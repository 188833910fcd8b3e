"""
Poisson control backend: T = (-Laplace)^-1, B = identity, U = H = L2(Omega).

Controls are not clamped at the mesh nodes. They live at the edge midpoints,
the quadrature points of the midpoint rule with weight area/3 per adjacent
triangle, which is exact for products of P1 functions. Loads, inner products
and the projection formula all use that rule, so u = clamp(-p_h / alpha) at
the midpoints is the exact optimality condition of the discrete problem.
"""

import logging
from dataclasses import dataclass
from typing import Any, Callable, Dict, Optional

import numpy as np
import scipy.sparse as sps

from tikhonov_lab.core.control_space import AdmissibleBox
from tikhonov_lab.core.errors import DimensionMismatchError
from tikhonov_lab.core.mesh_fem import SpaceMesh, SparseOperator, SpdSolver, assemble
from tikhonov_lab.core.models import FixedPointConfig
from tikhonov_lab.services.backends import ProblemBackend

logger = logging.getLogger(__name__)


def bang_bang_reference(x, y):
    """0.2 sign(x1 - 1/2)"""
    return 0.2 * np.sign(x - 0.5)


@dataclass
class EllipticProblem:
    mesh: SpaceMesh
    mass: SparseOperator
    stiffness: SparseOperator
    box: AdmissibleBox
    target: Optional[np.ndarray] = None
    reference_control: Optional[np.ndarray] = None
    quadrature: str = "edge-midpoint"
    linear_solver: str = "direct"
    cg_tolerance: float = 1e-13
    residual_tolerance: float = 1e-12

    def __post_init__(self):
        tri = self.mesh.triangles
        pairs = np.sort(np.concatenate([tri[:, [0, 1]], tri[:, [1, 2]], tri[:, [2, 0]]]), axis=1)
        edges, inverse = np.unique(pairs, axis=0, return_inverse=True)
        areas = self.mesh.signed_areas()
        self.edges = edges
        self.weights = np.bincount(inverse.ravel(), weights=np.tile(areas / 3.0, 3), minlength=len(edges))
        self.points = 0.5 * (self.mesh.nodes[edges[:, 0]] + self.mesh.nodes[edges[:, 1]])

        n, e = self.mesh.node_count, len(edges)
        cols = np.arange(e)
        half = 0.5 * self.weights
        self.load_matrix = sps.coo_matrix(
            (np.concatenate([half, half]), (np.concatenate([edges[:, 0], edges[:, 1]]), np.concatenate([cols, cols]))),
            shape=(n, e),
        ).tocsr()
        self.solver = SpdSolver(
            self.mesh, self.mass, self.stiffness, method=self.linear_solver,
            cg_tolerance=self.cg_tolerance, residual_tolerance=self.residual_tolerance,
        )

        if self.target is None:
            self.target = np.zeros(n)
        if self.target.shape != (n,):
            raise DimensionMismatchError(f"target must have {n} nodal values, got {self.target.shape}")
        if np.any(self.target[self.mesh.boundary_mask] != 0.0):
            raise ValueError("target must vanish on boundary nodes")

    @property
    def control_size(self) -> int:
        return len(self.edges)

    def at_points(self, nodal: np.ndarray) -> np.ndarray:
        """Values of a P1 field at the edge midpoints."""
        return 0.5 * (nodal[self.edges[:, 0]] + nodal[self.edges[:, 1]])

    def sample(self, fn: Callable) -> np.ndarray:
        return np.asarray(fn(self.points[:, 0], self.points[:, 1]), dtype=float)

    def state(self, u: np.ndarray) -> np.ndarray:
        """y_h with K y = (u, phi_i) by the midpoint rule."""
        u = np.asarray(u, dtype=float)
        if u.shape != (self.control_size,):
            raise DimensionMismatchError(f"control must have {self.control_size} values, got {u.shape}")
        return self.solver.solve(self.load_matrix @ u, 0.0, 1.0)


def elliptic_q(problem: EllipticProblem, u: np.ndarray) -> np.ndarray:
    """Nodal adjoint p_h with K y = (u, phi_i), K p = M (y - z)."""
    y = problem.state(u)
    return problem.solver.solve(problem.mass.matrix @ (y - problem.target), 0.0, 1.0)


def make_poisson_example(mesh: SpaceMesh, box: Optional[AdmissibleBox] = None,
                         target_control: Optional[Callable] = None,
                         linear_solver: str = "direct", cg_tolerance: float = 1e-13,
                         residual_tolerance: float = 1e-12) -> EllipticProblem:
    """Problem with z := T u_ref, so u_ref solves the unregularized problem."""
    problem = EllipticProblem(
        mesh=mesh,
        mass=assemble(mesh, "mass"),
        stiffness=assemble(mesh, "stiffness"),
        box=box or AdmissibleBox(-0.2, 0.2),
        linear_solver=linear_solver,
        cg_tolerance=cg_tolerance,
        residual_tolerance=residual_tolerance,
    )
    reference = problem.sample(target_control or bang_bang_reference)
    problem.reference_control = reference
    problem.target = problem.state(reference)
    return problem


def gradient_check(problem: EllipticProblem, u: np.ndarray, direction: np.ndarray, eps: float = 1e-4) -> float:
    """
    Relative mismatch between a central difference of 1/2 |T u - z|^2 and (p_h, direction).
    """
    def tracking(v):
        d = problem.state(v) - problem.target
        return 0.5 * float(d @ (problem.mass.matrix @ d))

    fd = (tracking(u + eps * direction) - tracking(u - eps * direction)) / (2.0 * eps)
    exact = float(np.sum(problem.weights * problem.at_points(elliptic_q(problem, u)) * direction))
    return abs(fd - exact) / max(abs(exact), 1e-300)


class EllipticBackend(ProblemBackend):
    """Poisson control problem plugged into the generic fixed-point solver."""

    name = "poisson"

    def __init__(self, problem: EllipticProblem):
        self.problem = problem
        logger.info(
            "Poisson backend initialized",
            extra={"nodes": problem.mesh.node_count, "control_points": problem.control_size}
        )

    @property
    def box(self) -> AdmissibleBox:
        return self.problem.box

    @property
    def domain_measure(self) -> float:
        return float(self.problem.weights.sum())

    def initial_control(self, choice: str) -> np.ndarray:
        value = {"lower": self.box.lower, "upper": self.box.upper, "zero": 0.0}[choice]
        return np.full(self.problem.control_size, self.box.project(value))

    def evaluate(self, control: np.ndarray) -> np.ndarray:
        return self.problem.at_points(elliptic_q(self.problem, control))

    def control_from_q(self, alpha: float, q: np.ndarray) -> np.ndarray:
        if not alpha > 0:
            raise ValueError(f"alpha must be positive, got {alpha}")
        return self.box.project(-np.asarray(q) / alpha)

    def control_inner(self, u, v) -> float:
        return float(np.sum(self.problem.weights * u * v))

    def control_distance_sq(self, u, v) -> float:
        return float(np.sum(self.problem.weights * (u - v) ** 2))

    def vi_residual(self, u, q, alpha, v) -> float:
        return float(np.sum(self.problem.weights * (alpha * u + q) * (v - u)))

    def state_distance_sq(self, u, v) -> float:
        d = self.problem.state(u) - self.problem.state(v)
        return float(d @ (self.problem.mass.matrix @ d))

    def objective(self, u, alpha: float) -> float:
        d = self.problem.state(u) - self.problem.target
        return float(0.5 * d @ (self.problem.mass.matrix @ d) + 0.5 * alpha * self.control_inner(u, u))

    def record_metrics(self, u: np.ndarray) -> Dict[str, Optional[float]]:
        W = self.problem.weights
        a, b = self.box.lower, self.box.upper
        metrics: Dict[str, Optional[float]] = {
            "err_l1": None,
            "err_l2": None,
            "state_error": self._tracking_norm(u),
            "inactive_measure": float(W[(u > a) & (u < b)].sum()),
            "band_measure": None,
            "derivative_l1": None,
        }
        if self.problem.reference_control is not None:
            e = u - self.problem.reference_control
            metrics["err_l1"] = float(np.sum(W * np.abs(e)))
            metrics["err_l2"] = float(np.sqrt(np.sum(W * e ** 2)))
        if self.box.sigma is not None:
            eps = 0.5 * self.box.sigma
            metrics["band_measure"] = float(W[(u >= a + eps) & (u <= b - eps)].sum())
        return metrics

    def _tracking_norm(self, u) -> float:
        """|T u - z|, the state error when z is attained by an admissible control."""
        d = self.problem.state(u) - self.problem.target
        return float(np.sqrt(d @ (self.problem.mass.matrix @ d)))

    def describe(self) -> Dict[str, Any]:
        return {"backend": self.name, "nodes": self.problem.mesh.node_count}


def elliptic_fixed_point(problem: EllipticProblem, alpha: float, cfg: Optional[FixedPointConfig] = None):
    """Projection-formula fixed point at the control points; returns the solver result."""
    from tikhonov_lab.services.tikhonov_solver import solve_fixed_point
    return solve_fixed_point(EllipticBackend(problem), alpha, cfg or FixedPointConfig())
