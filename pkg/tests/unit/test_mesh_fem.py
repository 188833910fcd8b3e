"""
Unit tests for P1 mesh construction, assembly and SPD solves.
"""

from collections import Counter

import numpy as np
import pytest

from tikhonov_lab.core.errors import DimensionMismatchError, LinearSolveError
from tikhonov_lab.core.mesh_fem import (
    SpdSolver, assemble, build_uniform_mesh, interpolate, l2_error, solve_spd
)


def g1(x, y):
    return np.sin(np.pi * x) * np.sin(np.pi * y)


class TestBuildUniformMesh:
    """Test criss-cross triangulation of the unit square."""

    def test_two_nodes_per_side(self):
        mesh = build_uniform_mesh(2)
        assert mesh.node_count == 4
        assert mesh.triangles.shape == (2, 3)
        assert mesh.boundary_mask.all()

    def test_single_interior_node(self):
        mesh = build_uniform_mesh(3)
        assert mesh.node_count == 9
        assert list(mesh.interior) == [4]

    def test_standard_grid_size(self):
        mesh = build_uniform_mesh(33)
        assert mesh.node_count == 1089
        assert mesh.triangles.shape[0] == 2 * 32 * 32

    def test_rejects_too_few_nodes(self):
        with pytest.raises(ValueError):
            build_uniform_mesh(1)

    def test_positive_areas(self):
        mesh = build_uniform_mesh(6)
        areas = mesh.signed_areas()
        assert np.all(areas > 0)
        assert areas.sum() == pytest.approx(1.0, abs=1e-14)

    def test_conforming_edges(self):
        n = 5
        mesh = build_uniform_mesh(n)
        edges = Counter()
        for tri in mesh.triangles:
            for a, b in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])):
                edges[tuple(sorted((a, b)))] += 1
        assert set(edges.values()) <= {1, 2}
        assert sum(1 for v in edges.values() if v == 1) == 4 * (n - 1)

    def test_boundary_mask_matches_coordinates(self):
        mesh = build_uniform_mesh(7)
        on_edge = np.any(np.isclose(mesh.nodes, 0.0) | np.isclose(mesh.nodes, 1.0), axis=1)
        assert np.array_equal(on_edge, mesh.boundary_mask)

    def test_mesh_size(self):
        mesh = build_uniform_mesh(5)
        assert mesh.h == pytest.approx(np.sqrt(2) / 4)

    def test_dump(self, tmp_path):
        mesh = build_uniform_mesh(3)
        path = mesh.dump(tmp_path / "mesh.txt")
        lines = path.read_text().splitlines()
        assert lines[0] == "# nodes 9"
        assert "# triangles 8" in lines
        assert len(lines) == 2 + 9 + 8


class TestAssemble:
    """Test mass and stiffness assembly."""

    @pytest.fixture
    def mesh(self):
        return build_uniform_mesh(9)

    def test_mass_sums_to_area(self, mesh):
        mass = assemble(mesh, "mass")
        assert mass.matrix.sum() == pytest.approx(1.0, abs=1e-12)

    def test_stiffness_rows_sum_to_zero(self, mesh):
        stiff = assemble(mesh, "stiffness")
        assert np.abs(np.asarray(stiff.matrix.sum(axis=1))).max() < 1e-12

    @pytest.mark.parametrize("role", ["mass", "stiffness"])
    def test_exact_symmetry(self, mesh, role):
        op = assemble(mesh, role)
        diff = op.matrix - op.matrix.T
        assert diff.nnz == 0 or np.abs(diff.data).max() == 0.0
        assert op.role == role
        assert op.dimension == mesh.node_count

    def test_mass_positive_definite(self, mesh):
        mass = assemble(mesh, "mass")
        rng = np.random.default_rng(0)
        for _ in range(100):
            v = rng.standard_normal(mesh.node_count)
            assert v @ (mass.matrix @ v) > 0

    def test_g1_mass_norm(self):
        mesh = build_uniform_mesh(33)
        mass = assemble(mesh, "mass")
        g = interpolate(mesh, g1)
        assert g @ (mass.matrix @ g) == pytest.approx(0.25, abs=5e-3)

    def test_unknown_role(self, mesh):
        with pytest.raises(ValueError):
            assemble(mesh, "damping")

    def test_entries(self, mesh):
        rows, cols, vals = assemble(mesh, "mass").entries()
        assert rows.shape == cols.shape == vals.shape


class TestInterpolation:
    """Test interpolation and the L2 error functional."""

    def test_linear_function_is_reproduced(self):
        mesh = build_uniform_mesh(5)

        def f(x, y):
            return 2.0 * x - y + 0.5

        assert l2_error(mesh, interpolate(mesh, f), f) < 1e-12

    def test_second_order_interpolation(self):
        errors = []
        for n in (9, 17, 33):
            mesh = build_uniform_mesh(n)
            errors.append(l2_error(mesh, interpolate(mesh, g1), g1))
        orders = np.log2(np.array(errors[:-1]) / np.array(errors[1:]))
        assert np.all(orders >= 1.8)

    def test_l2_error_shape_check(self):
        mesh = build_uniform_mesh(3)
        with pytest.raises(DimensionMismatchError):
            l2_error(mesh, np.zeros(4), g1)


class TestSpdSolver:
    """Test reduced SPD solves with factor reuse."""

    @pytest.fixture
    def setup(self):
        mesh = build_uniform_mesh(17)
        mass = assemble(mesh, "mass")
        stiff = assemble(mesh, "stiffness")
        return mesh, mass, stiff

    def test_mass_round_trip(self, setup):
        mesh, mass, stiff = setup
        rng = np.random.default_rng(1)
        v = np.where(mesh.boundary_mask, 0.0, rng.standard_normal(mesh.node_count))
        x = solve_spd(mesh, mass, stiff, mass.matrix @ v)
        assert np.linalg.norm(x - v) <= 1e-10 * np.linalg.norm(v)

    def test_eigenfunction_solve(self, setup):
        mesh, mass, stiff = setup
        g = interpolate(mesh, g1)
        y = solve_spd(mesh, mass, stiff, 2 * np.pi ** 2 * (mass.matrix @ g), mass_coef=0.0, stiff_coef=1.0)
        assert np.abs(y - g)[mesh.interior].max() < 0.03
        assert np.all(y[mesh.boundary_mask] == 0.0)

    def test_zero_rhs(self, setup):
        mesh, mass, stiff = setup
        x = solve_spd(mesh, mass, stiff, np.zeros(mesh.node_count), 1.0, 0.1)
        assert np.all(x == 0.0)

    def test_factor_is_cached(self, setup):
        mesh, mass, stiff = setup
        solver = SpdSolver(mesh, mass, stiff)
        rhs = np.ones(mesh.node_count)
        first = solver.solve(rhs, 1.0, 0.01)
        second = solver.solve(rhs, 1.0, 0.01)
        assert len(solver._cache) == 1
        assert np.array_equal(first, second)
        solver.solve(rhs, 1.0, 0.02)
        assert len(solver._cache) == 2

    def test_cg_matches_direct(self, setup):
        mesh, mass, stiff = setup
        rhs = mass.matrix @ interpolate(mesh, g1)
        direct = SpdSolver(mesh, mass, stiff).solve(rhs, 1.0, 0.05)
        cg = SpdSolver(mesh, mass, stiff, method="cg").solve(rhs, 1.0, 0.05)
        assert np.abs(direct - cg).max() < 1e-8

    def test_rejects_unknown_method(self, setup):
        mesh, mass, stiff = setup
        with pytest.raises(ValueError):
            SpdSolver(mesh, mass, stiff, method="gmres")

    def test_shape_mismatch(self, setup):
        mesh, mass, stiff = setup
        with pytest.raises(DimensionMismatchError):
            SpdSolver(mesh, mass, stiff).solve(np.ones(3))

    def test_default_residual_acceptance(self, setup):
        mesh, mass, stiff = setup
        solver = SpdSolver(mesh, mass, stiff)
        assert solver.residual_tolerance == 1e-12
        rhs = mass.matrix @ interpolate(mesh, g1)
        x = solver.solve(rhs, 1.0, 0.05)
        r = (rhs - (mass.matrix + 0.05 * stiff.matrix) @ x)[mesh.interior]
        assert np.linalg.norm(r) <= 1e-12 * np.linalg.norm(rhs[mesh.interior])

    @pytest.mark.parametrize("method", ["direct", "cg"])
    def test_unreachable_tolerance_raises(self, setup, method):
        mesh, mass, stiff = setup
        solver = SpdSolver(mesh, mass, stiff, method=method, residual_tolerance=1e-30)
        with pytest.raises(LinearSolveError) as exc_info:
            solver.solve(mass.matrix @ interpolate(mesh, g1), 1.0, 0.05)
        assert exc_info.value.residual > 1e-30
