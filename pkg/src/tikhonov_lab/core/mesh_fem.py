"""
P1 finite elements on a uniform triangulation of the unit square.
Mesh construction, mass/stiffness assembly, interpolation and SPD solves.
"""

import logging
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, Optional, Tuple, Union

import numpy as np
import scipy.sparse as sps
import scipy.sparse.linalg as spla

from tikhonov_lab.core.errors import DimensionMismatchError, LinearSolveError

try:  # CHOLMOD is faster, but needs SuiteSparse on the system
    from sksparse.cholmod import cholesky as _cholmod_cholesky
    _HAS_CHOLMOD = True
except ImportError:
    _HAS_CHOLMOD = False

logger = logging.getLogger(__name__)

ROLES = ("mass", "stiffness")

# 6-point, degree-4 rule on the reference triangle (barycentric coordinates, weights sum to 1)
_A, _B = 0.445948490915965, 0.091576213509771
_WA, _WB = 0.223381589678011, 0.109951743655322
_TRI_BARY = np.array([
    [_A, _A, 1 - 2 * _A], [1 - 2 * _A, _A, _A], [_A, 1 - 2 * _A, _A],
    [_B, _B, 1 - 2 * _B], [1 - 2 * _B, _B, _B], [_B, 1 - 2 * _B, _B],
])
_TRI_WEIGHTS = np.array([_WA, _WA, _WA, _WB, _WB, _WB])


@dataclass(frozen=True)
class SpaceMesh:
    """Conforming triangulation of [0,1]^2 with per-node boundary flags."""

    nodes: np.ndarray
    triangles: np.ndarray
    boundary_mask: np.ndarray
    n_per_side: int

    @property
    def node_count(self) -> int:
        return self.nodes.shape[0]

    @property
    def interior(self) -> np.ndarray:
        """Indices of nodes carrying X_h0 degrees of freedom."""
        return np.flatnonzero(~self.boundary_mask)

    @property
    def h(self) -> float:
        """Mesh size: largest triangle diameter."""
        p = self.nodes[self.triangles]
        edges = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 1], p[:, 0] - p[:, 2]], axis=1)
        return float(np.sqrt((edges ** 2).sum(axis=2)).max())

    def signed_areas(self) -> np.ndarray:
        p = self.nodes[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    def dump(self, path: Union[str, Path]) -> Path:
        """Write a plain-text node/triangle listing for debugging."""
        path = Path(path)
        lines = [f"# nodes {self.node_count}"]
        for i, (x, y) in enumerate(self.nodes):
            lines.append(f"{i} {x:.16g} {y:.16g} {int(self.boundary_mask[i])}")
        lines.append(f"# triangles {self.triangles.shape[0]}")
        for i, (a, b, c) in enumerate(self.triangles):
            lines.append(f"{i} {a} {b} {c}")
        path.write_text("\n".join(lines) + "\n")
        return path


@dataclass(frozen=True)
class SparseOperator:
    """Assembled symmetric P1 matrix tagged with its bilinear form."""

    matrix: sps.csr_matrix
    role: str

    @property
    def dimension(self) -> int:
        return self.matrix.shape[0]

    def entries(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Nonzero entries as (row, col, value) arrays."""
        coo = self.matrix.tocoo()
        return coo.row, coo.col, coo.data

    def __matmul__(self, other):
        return self.matrix @ other


def build_uniform_mesh(n_per_side: int) -> SpaceMesh:
    """One-diagonal triangulation of the unit square: every cell is cut from south-west to north-east."""
    if n_per_side < 2:
        raise ValueError(f"n_per_side must be at least 2, got {n_per_side}")

    coords = np.linspace(0.0, 1.0, n_per_side)
    xx, yy = np.meshgrid(coords, coords)
    nodes = np.column_stack([xx.ravel(), yy.ravel()])

    i, j = np.meshgrid(np.arange(n_per_side - 1), np.arange(n_per_side - 1))
    i, j = i.ravel(), j.ravel()
    sw = j * n_per_side + i
    se = sw + 1
    ne = se + n_per_side
    nw = sw + n_per_side
    triangles = np.concatenate([
        np.column_stack([sw, se, ne]),
        np.column_stack([sw, ne, nw]),
    ]).astype(np.int64)

    boundary = np.any((nodes == 0.0) | (nodes == 1.0), axis=1)
    return SpaceMesh(nodes=nodes, triangles=triangles, boundary_mask=boundary, n_per_side=n_per_side)


def assemble(mesh: SpaceMesh, role: str) -> SparseOperator:
    """Assemble the exact P1 mass or stiffness matrix."""
    if role not in ROLES:
        raise ValueError(f"role must be one of {ROLES}, got {role!r}")

    areas = mesh.signed_areas()
    if np.any(areas <= 0):
        raise ValueError("mesh contains triangles with non-positive area")

    if role == "mass":
        local = np.array([[2.0, 1.0, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0]]) / 12.0
        blocks = areas[:, None, None] * local[None, :, :]
    else:
        p = mesh.nodes[mesh.triangles]
        # gradient of barycentric coordinate i is the rotated opposite edge / (2 area)
        opposite = np.stack([p[:, 2] - p[:, 1], p[:, 0] - p[:, 2], p[:, 1] - p[:, 0]], axis=1)
        grads = np.stack([-opposite[:, :, 1], opposite[:, :, 0]], axis=2) / (2.0 * areas[:, None, None])
        blocks = areas[:, None, None] * np.einsum("tik,tjk->tij", grads, grads)

    rows = np.repeat(mesh.triangles, 3, axis=1).ravel()
    cols = np.tile(mesh.triangles, (1, 3)).ravel()
    n = mesh.node_count
    matrix = sps.coo_matrix((blocks.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    # (a + b) / 2 is bit-symmetric
    matrix = ((matrix + matrix.T) * 0.5).tocsr()
    matrix.sort_indices()
    return SparseOperator(matrix=matrix, role=role)


def interpolate(mesh: SpaceMesh, fn: Callable[[np.ndarray, np.ndarray], np.ndarray]) -> np.ndarray:
    """Nodal interpolant of fn(x1, x2)."""
    return np.asarray(fn(mesh.nodes[:, 0], mesh.nodes[:, 1]), dtype=float)


def l2_error(mesh: SpaceMesh, nodal: np.ndarray,
             fn: Callable[[np.ndarray, np.ndarray], np.ndarray]) -> float:
    """L2(Omega) distance between a P1 field and a function, degree-4 triangle quadrature."""
    if nodal.shape != (mesh.node_count,):
        raise DimensionMismatchError(f"expected {mesh.node_count} nodal values, got {nodal.shape}")
    p = mesh.nodes[mesh.triangles]                       # (T, 3, 2)
    points = np.einsum("qi,tid->tqd", _TRI_BARY, p)       # (T, Q, 2)
    fh = np.einsum("qi,ti->tq", _TRI_BARY, nodal[mesh.triangles])
    exact = fn(points[..., 0], points[..., 1])
    err = (fh - exact) ** 2 @ _TRI_WEIGHTS
    return float(np.sqrt(np.sum(mesh.signed_areas() * err)))


def mass_norm(mass: SparseOperator, v: np.ndarray) -> float:
    return float(np.sqrt(max(v @ (mass.matrix @ v), 0.0)))


@dataclass
class SpdSolver:
    """
    Solves (cm * M + ck * K) x = b on the interior nodes with homogeneous boundary values.

    One factorization (or preconditioner) is cached per coefficient pair, so the
    thousands of identical solves in a time-stepping loop reuse it.
    """

    mesh: SpaceMesh
    mass: SparseOperator
    stiffness: SparseOperator
    method: str = "direct"
    cg_tolerance: float = 1e-13
    residual_tolerance: float = 1e-12
    _cache: Dict[Tuple[float, float], Tuple[sps.csc_matrix, Callable]] = field(
        default_factory=dict, init=False, repr=False
    )
    _lock: threading.Lock = field(default_factory=threading.Lock, init=False, repr=False)

    def __post_init__(self):
        if self.method not in ("direct", "cg"):
            raise ValueError(f"unsupported linear solver method: {self.method}")
        idx = self.mesh.interior
        self._interior = idx
        self._mass_ii = self.mass.matrix[idx][:, idx].tocsc()
        self._stiff_ii = self.stiffness.matrix[idx][:, idx].tocsc()

    @property
    def interior(self) -> np.ndarray:
        return self._interior

    def reduced(self, mass_coef: float = 1.0, stiff_coef: float = 0.0) -> sps.csc_matrix:
        return (mass_coef * self._mass_ii + stiff_coef * self._stiff_ii).tocsc()

    def _factor(self, mass_coef: float, stiff_coef: float):
        key = (float(mass_coef), float(stiff_coef))
        if key in self._cache:
            return self._cache[key]

        if mass_coef < 0 or stiff_coef < 0 or (mass_coef == 0 and stiff_coef == 0):
            raise LinearSolveError(f"system {key} is not positive definite")

        A = self.reduced(mass_coef, stiff_coef)
        logger.debug("Factorizing reduced system", extra={"coefficients": key, "size": A.shape[0]})

        if self.method == "direct":
            try:
                if _HAS_CHOLMOD:
                    factor = _cholmod_cholesky(A)
                    apply = factor
                else:
                    lu = spla.splu(A)
                    apply = lu.solve
            except Exception as e:
                raise LinearSolveError(f"factorization failed for system {key}: {e}") from e
        else:
            diag = A.diagonal()
            if np.any(diag <= 0):
                raise LinearSolveError(f"system {key} has a non-positive diagonal")
            precond = spla.LinearOperator(A.shape, matvec=lambda x: x / diag)

            def apply(b, A=A, precond=precond):
                x, info = spla.cg(A, b, rtol=self.cg_tolerance, atol=0.0,
                                  maxiter=10 * A.shape[0], M=precond)
                if info != 0:
                    raise LinearSolveError(f"conjugate gradients did not converge (info={info})")
                return x

        self._cache[key] = (A, apply)
        return self._cache[key]

    def solve_reduced(self, rhs: np.ndarray, mass_coef: float = 1.0, stiff_coef: float = 0.0) -> np.ndarray:
        """Solve on interior coordinates only."""
        if rhs.shape != (self._interior.size,):
            raise DimensionMismatchError(
                f"expected {self._interior.size} interior values, got {rhs.shape}"
            )
        norm_b = np.linalg.norm(rhs)
        if norm_b == 0.0:
            return np.zeros_like(rhs)
        # factor objects are shared between path levels running in threads
        with self._lock:
            A, apply = self._factor(mass_coef, stiff_coef)
            x = np.asarray(apply(rhs)).reshape(-1)
        residual = np.linalg.norm(rhs - A @ x) / norm_b
        if not np.isfinite(residual) or residual > self.residual_tolerance:
            raise LinearSolveError(f"relative residual {residual:.3e} exceeds tolerance", residual=residual)
        return x

    def solve(self, rhs: np.ndarray, mass_coef: float = 1.0, stiff_coef: float = 0.0) -> np.ndarray:
        """Solve with a full nodal right-hand side; boundary rows are dropped, boundary values are 0."""
        if rhs.shape != (self.mesh.node_count,):
            raise DimensionMismatchError(f"expected {self.mesh.node_count} nodal values, got {rhs.shape}")
        out = np.zeros(self.mesh.node_count)
        if self._interior.size:
            out[self._interior] = self.solve_reduced(rhs[self._interior], mass_coef, stiff_coef)
        return out


def solve_spd(mesh: SpaceMesh, mass: SparseOperator, stiffness: SparseOperator, rhs: np.ndarray,
              mass_coef: float = 1.0, stiff_coef: float = 0.0,
              solver: Optional[SpdSolver] = None) -> np.ndarray:
    """One-shot solve of (cm * M + ck * K) x = rhs restricted to interior nodes."""
    solver = solver or SpdSolver(mesh, mass, stiffness)
    return solver.solve(rhs, mass_coef, stiff_coef)
