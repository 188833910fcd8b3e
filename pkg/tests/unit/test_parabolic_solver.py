"""
Unit tests for the discrete state and adjoint heat solvers.
"""

import numpy as np
import pytest

from tikhonov_lab.core.errors import DimensionMismatchError
from tikhonov_lab.core.mesh_fem import build_uniform_mesh, interpolate
from tikhonov_lab.core.parabolic_solver import ParabolicOperator, separable_load
from tikhonov_lab.core.time_grid import build_uniform_partition, char_weights, hat_weights


def g1(x, y):
    return np.sin(np.pi * x) * np.sin(np.pi * y)


@pytest.fixture
def toy_operator():
    return ParabolicOperator(build_uniform_mesh(3), build_uniform_partition(8, 0.5))


@pytest.fixture
def small_operator():
    return ParabolicOperator(build_uniform_mesh(6), build_uniform_partition(8, 0.5))


class TestSolveState:
    """Test the forward recurrence."""

    def test_zero_data(self, small_operator):
        traj = small_operator.solve_state(np.zeros(small_operator.shape))
        assert np.all(traj.values == 0.0)
        assert traj.values.shape == small_operator.shape

    def test_boundary_values_vanish(self, small_operator):
        rng = np.random.default_rng(2)
        traj = small_operator.solve_state(rng.standard_normal(small_operator.shape))
        assert np.all(traj.values[:, small_operator.mesh.boundary_mask] == 0.0)

    def test_steady_eigenfunction(self):
        mesh = build_uniform_mesh(17)
        part = build_uniform_partition(16, 0.5)
        op = ParabolicOperator(mesh, part)
        g = interpolate(mesh, g1)
        weights = hat_weights(lambda t: 2 * np.pi ** 2 * np.ones_like(t), part)[:-1]
        load = separable_load(weights, op.mass.matrix @ g)
        traj = op.solve_state(load, y0=g)
        assert np.abs(traj.values - g)[:, mesh.interior].max() < 0.03

    def test_unforced_decay(self, small_operator):
        rng = np.random.default_rng(3)
        mesh = small_operator.mesh
        y0 = np.where(mesh.boundary_mask, 0.0, rng.standard_normal(mesh.node_count))
        traj = small_operator.solve_state(np.zeros(small_operator.shape), y0=y0)
        mass = small_operator.mass.matrix
        norms = [np.sqrt(y0 @ (mass @ y0))] + [np.sqrt(y @ (mass @ y)) for y in traj.values]
        assert np.all(np.diff(norms) <= 1e-12)

    def test_load_shape_checked(self, small_operator):
        with pytest.raises(DimensionMismatchError):
            small_operator.solve_state(np.zeros((3, 3)))

    def test_initial_value_shape_checked(self, small_operator):
        with pytest.raises(DimensionMismatchError):
            small_operator.solve_state(np.zeros(small_operator.shape), y0=np.zeros(2))

    def test_l2_norm_and_dump(self, small_operator, tmp_path):
        traj = small_operator.solve_state(np.zeros(small_operator.shape))
        assert traj.l2_norm_sq(small_operator.mass) == 0.0
        path = traj.to_csv(tmp_path / "state.csv")
        lines = path.read_text().splitlines()
        assert lines[0].startswith("m,t,v0")
        assert len(lines) == 1 + small_operator.partition.M


class TestSolveAdjoint:
    """Test the backward recurrence."""

    def test_zero_load(self, small_operator):
        traj = small_operator.solve_adjoint(np.zeros(small_operator.shape))
        assert np.all(traj.values == 0.0)
        assert traj.values.shape[0] == small_operator.partition.M + 1

    def test_terminal_closure(self, small_operator):
        rng = np.random.default_rng(4)
        traj = small_operator.solve_adjoint(rng.standard_normal(small_operator.shape))
        assert np.all(traj.values[-1] == 0.0)
        assert np.any(traj.values[0] != 0.0)

    def _manufactured_error(self, op, c, minus_dc):
        """Largest nodal L2 error for p(t) = c(t) v with H_m built from -M p' + K p."""
        v = interpolate(op.mesh, g1)
        v[op.mesh.boundary_mask] = 0.0
        mass, stiff = op.mass.matrix, op.stiffness.matrix
        load = (separable_load(char_weights(minus_dc, op.partition), mass @ v)
                + separable_load(char_weights(c, op.partition), stiff @ v))
        e = op.solve_adjoint(load).values - np.outer(c(op.partition.nodes), v)
        return float(np.sqrt(np.einsum("mi,mi->m", e, (mass @ e.T).T).max()))

    def test_linear_adjoint_is_reproduced(self, small_operator):
        # p(t) = (T_e - t) v, the kappa = 1 adjoint of the manufactured example
        error = self._manufactured_error(small_operator, lambda t: 0.5 - np.asarray(t), np.ones_like)
        assert error < 1e-12

    def test_second_order_in_time(self):
        mesh = build_uniform_mesh(5)
        errors = []
        for M in (16, 32, 64, 128):
            op = ParabolicOperator(mesh, build_uniform_partition(M, 0.5))
            errors.append(self._manufactured_error(
                op,
                lambda t: np.sin(2 * np.pi * (0.5 - np.asarray(t))),
                lambda t: 2 * np.pi * np.cos(2 * np.pi * (0.5 - np.asarray(t))),
            ))
        orders = np.log2(np.array(errors[:-1]) / np.array(errors[1:]))
        assert np.all(orders >= 1.8), orders

    def test_dump(self, small_operator, tmp_path):
        traj = small_operator.solve_adjoint(np.ones(small_operator.shape))
        lines = traj.to_csv(tmp_path / "adjoint.csv").read_text().splitlines()
        assert len(lines) == 2 + small_operator.partition.M


class TestAdjointness:
    """Test that the adjoint scheme is the exact transpose of the state scheme."""

    def test_random_load_pairs(self, toy_operator):
        rng = np.random.default_rng(5)
        for _ in range(100):
            F = rng.standard_normal(toy_operator.shape)
            H = rng.standard_normal(toy_operator.shape)
            assert toy_operator.check_adjointness(F, H) <= 1e-10

    def test_with_initial_value(self, small_operator):
        rng = np.random.default_rng(6)
        y0 = rng.standard_normal(small_operator.mesh.node_count)
        F = rng.standard_normal(small_operator.shape)
        H = rng.standard_normal(small_operator.shape)
        assert small_operator.check_adjointness(F, H, y0=y0) <= 1e-10

    def test_zero_state_load(self, toy_operator):
        H = np.ones(toy_operator.shape)
        assert toy_operator.check_adjointness(np.zeros(toy_operator.shape), H) == 0.0

    def test_zero_adjoint_load(self, toy_operator):
        F = np.ones(toy_operator.shape)
        assert toy_operator.check_adjointness(F, np.zeros(toy_operator.shape)) == 0.0

    def test_non_uniform_partition(self):
        from tikhonov_lab.core.time_grid import TimePartition

        op = ParabolicOperator(build_uniform_mesh(4), TimePartition(np.array([0.0, 0.05, 0.2, 0.3, 0.5])))
        rng = np.random.default_rng(7)
        F = rng.standard_normal(op.shape)
        H = rng.standard_normal(op.shape)
        assert op.check_adjointness(F, H) <= 1e-10

    def test_cg_solver(self):
        op = ParabolicOperator(build_uniform_mesh(5), build_uniform_partition(6, 0.5), linear_solver="cg")
        rng = np.random.default_rng(8)
        assert op.check_adjointness(rng.standard_normal(op.shape), rng.standard_normal(op.shape)) <= 1e-10
