"""
Unit tests for admissible controls and exact clamp-aware integration.
"""

import numpy as np
import pytest
from scipy.integrate import simpson

from tikhonov_lab.core.control_space import (
    AdmissibleBox, ImplicitControl, LocatedControlOperator, apply_B_star, band_measure,
    control_derivative_l1, control_error_norms, control_hat_weights, control_inner, control_load,
    inactive_measure, level_set_measure, project_box, sample_control, variational_residual,
    write_control_samples
)
from tikhonov_lab.core.mesh_fem import assemble, build_uniform_mesh, interpolate
from tikhonov_lab.core.parabolic_solver import AdjointTrajectory
from tikhonov_lab.core.time_grid import PiecewiseLinearScalar, build_uniform_partition

BOX = AdmissibleBox(-0.2, 0.2)


def g1(x, y):
    return np.sin(np.pi * x) * np.sin(np.pi * y)


def ramp_control(M=1, alpha=1.0):
    """q(t) = t - 0.25 on [0, 0.5]; the clamp switches at t = 0.05 and t = 0.45."""
    part = build_uniform_partition(M, 0.5)
    return ImplicitControl(alpha, PiecewiseLinearScalar(part.nodes - 0.25, part), BOX)


class TestProjection:
    """Test box projection and admissible boxes."""

    def test_examples(self):
        assert project_box(0.5, BOX) == 0.2
        assert project_box(-0.05, BOX) == -0.05

    def test_idempotent_and_lipschitz(self):
        rng = np.random.default_rng(10)
        v = rng.normal(scale=0.5, size=1000)
        w = rng.normal(scale=0.5, size=1000)
        pv = project_box(v, BOX)
        assert np.array_equal(project_box(pv, BOX), pv)
        assert np.all(np.abs(pv - project_box(w, BOX)) <= np.abs(v - w))

    def test_box_validation(self):
        with pytest.raises(ValueError):
            AdmissibleBox(0.3, 0.1)

    def test_sigma(self):
        assert BOX.sigma == 0.2
        assert AdmissibleBox(-0.5, 0.1).sigma == 0.1
        assert AdmissibleBox(0.0, 1.0).sigma is None
        assert BOX.contains([0.0, -0.2, 0.2])
        assert not BOX.contains(0.21)


class TestImplicitControl:
    """Test the variationally discretized control."""

    def test_rejects_nonpositive_alpha(self):
        part = build_uniform_partition(2, 0.5)
        with pytest.raises(ValueError):
            ImplicitControl(0.0, PiecewiseLinearScalar(np.zeros(3), part), BOX)

    def test_values_stay_in_box(self):
        part = build_uniform_partition(10, 0.5)
        rng = np.random.default_rng(11)
        u = ImplicitControl(0.1, PiecewiseLinearScalar(rng.normal(size=11), part), BOX)
        t = np.linspace(0, 0.5, 1001)
        assert np.max(np.abs(u(t))) <= 0.2
        assert BOX.contains(u.nodal_values)

    def test_constant(self):
        part = build_uniform_partition(4, 0.5)
        u = ImplicitControl.constant(-0.2, part, BOX)
        assert np.all(u.nodal_values == -0.2)
        with pytest.raises(ValueError):
            ImplicitControl.constant(0.3, part, BOX)


class TestExactIntegrals:
    """Test breakpoint-split integrals against hand computations."""

    @pytest.mark.parametrize("M", [1, 4, 7])
    def test_ramp_error_norms(self, M):
        l1, l2 = control_error_norms(ramp_control(M), -0.2)
        assert l1 == pytest.approx(0.10, abs=1e-14)
        assert l2 == pytest.approx(np.sqrt(0.008 + 0.4 * 0.16 / 3), abs=1e-14)

    @pytest.mark.parametrize("M", [1, 4, 7])
    def test_ramp_inactive_measure(self, M):
        assert inactive_measure(ramp_control(M)) == pytest.approx(0.40, abs=1e-14)

    @pytest.mark.parametrize("M", [1, 4, 7])
    def test_ramp_derivative(self, M):
        assert control_derivative_l1(ramp_control(M)) == pytest.approx(0.40, abs=1e-14)

    def test_fully_active(self):
        part = build_uniform_partition(4, 0.5)
        u = ImplicitControl(1.0, PiecewiseLinearScalar(np.full(5, -1.0), part), BOX)
        assert inactive_measure(u) == 0.0
        assert control_derivative_l1(u) == 0.0

    def test_fully_inactive(self):
        part = build_uniform_partition(4, 0.5)
        u = ImplicitControl(1.0, PiecewiseLinearScalar(np.zeros(5), part), BOX)
        assert inactive_measure(u) == pytest.approx(0.5)
        assert control_derivative_l1(u) == 0.0

    def test_self_distance(self):
        u = ramp_control(3)
        assert control_error_norms(u, u) == (0.0, 0.0)

    def test_inner_products(self):
        u = ramp_control(1)
        assert control_inner(u, 1.0) == pytest.approx(0.0, abs=1e-15)
        assert control_inner(u, u) == pytest.approx(0.004 + 0.4 * 0.04 / 3, abs=1e-15)

    def test_variational_residual_nonnegative(self):
        u = ramp_control(4)
        for v in (BOX.lower, BOX.upper, BOX.midpoint):
            assert variational_residual(u, u.q, u.alpha, v) >= -1e-15

    def test_band_measure(self):
        assert band_measure(ramp_control(3), margin=0.1) == pytest.approx(0.2, abs=1e-14)
        assert band_measure(ramp_control(3)) == pytest.approx(0.2, abs=1e-14)
        with pytest.raises(ValueError):
            band_measure(ramp_control(3), margin=0.25)

    def test_level_set_measure(self):
        part = build_uniform_partition(1, 1.0)
        assert level_set_measure(np.array([0.0, 1.0]), part, -0.1, 0.1) == pytest.approx(0.1)
        part = build_uniform_partition(2, 1.0)
        assert level_set_measure(np.array([0.0, 0.0, 1.0]), part, -0.1, 0.1) == pytest.approx(0.55)
        assert level_set_measure(np.array([0.0, 0.0, 1.0]), part, 0.2, 0.1) == 0.0

    def test_simpson_oracle(self):
        rng = np.random.default_rng(12)
        part = build_uniform_partition(6, 0.5)
        t = np.linspace(0.0, 0.5, 6 * 10_000 + 1)
        for _ in range(100):
            alpha = rng.uniform(0.2, 2.0)
            u = ImplicitControl(alpha, PiecewiseLinearScalar(rng.normal(scale=0.4, size=7), part), BOX)
            e = u(t) + 0.2
            l1, l2 = control_error_norms(u, -0.2)
            assert l1 == pytest.approx(simpson(np.abs(e), x=t), abs=1e-6)
            assert l2 ** 2 == pytest.approx(simpson(e ** 2, x=t), abs=1e-6)

            mid = 0.5 * (t[1:] + t[:-1])
            arg = -u.q(mid) / alpha
            brute = np.sum(np.diff(t)[(arg > -0.2) & (arg < 0.2)])
            assert inactive_measure(u) == pytest.approx(brute, abs=1e-4)

    def test_total_variation(self):
        rng = np.random.default_rng(13)
        part = build_uniform_partition(5, 0.5)
        q = PiecewiseLinearScalar(rng.normal(scale=0.3, size=6), part)
        u = ImplicitControl(0.7, q, BOX)
        t = np.linspace(0.0, 0.5, 500_001)
        assert control_derivative_l1(u) == pytest.approx(np.sum(np.abs(np.diff(u(t)))), abs=1e-9)


class TestLocatedControlOperator:
    """Test B, B* and the control load."""

    @pytest.fixture
    def operator(self):
        mesh = build_uniform_mesh(33)
        return mesh, LocatedControlOperator(assemble(mesh, "mass"), interpolate(mesh, g1))

    def test_zero_adjoint(self, operator):
        mesh, op = operator
        part = build_uniform_partition(4, 0.5)
        p = AdjointTrajectory(np.zeros((5, mesh.node_count)), part, mesh)
        assert np.all(apply_B_star(op, p).values == 0.0)

    def test_g1_image(self, operator):
        mesh, op = operator
        part = build_uniform_partition(4, 0.5)
        p = AdjointTrajectory(np.tile(op.g1, (5, 1)), part, mesh)
        assert np.allclose(apply_B_star(op, p).values, 0.25, atol=5e-3)

    def test_constant_control_hat_weights(self):
        part = build_uniform_partition(8, 0.5)
        u = ImplicitControl(2.0, PiecewiseLinearScalar(np.full(9, -0.1), part), BOX)
        weights = control_hat_weights(u)
        assert weights[1:-1] == pytest.approx(0.05 * 0.5 / 8)
        assert weights[0] == pytest.approx(0.05 * 0.5 / 16)

    def test_large_alpha_load_reduces_to_drift(self):
        mesh = build_uniform_mesh(3)
        op = LocatedControlOperator(assemble(mesh, "mass"), interpolate(mesh, g1))
        part = build_uniform_partition(8, 0.5)
        u = ImplicitControl(1e9, PiecewiseLinearScalar(np.linspace(-1, 1, 9), part), BOX)
        drift = np.ones((8, mesh.node_count))
        assert np.abs(control_load(u, op, drift) - drift).max() < 1e-8

    def test_ramp_load(self):
        mesh = build_uniform_mesh(3)
        op = LocatedControlOperator(assemble(mesh, "mass"), interpolate(mesh, g1))
        u = ramp_control(4)
        F = control_load(u, op)
        assert F.shape == (4, 9)
        assert np.allclose(F, np.outer(control_hat_weights(u)[:-1], op.w))


class TestSampling:
    """Test control sample output."""

    def test_breakpoints_included(self):
        times, values = sample_control(ramp_control(1))
        assert np.any(np.isclose(times, 0.05)) and np.any(np.isclose(times, 0.45))
        assert values[0] == 0.2 and values[-1] == -0.2

    def test_write(self, tmp_path):
        path = write_control_samples(tmp_path / "u.csv", ramp_control(1), reference=-0.2)
        lines = path.read_text().splitlines()
        assert lines[0] == "t,u,reference"
        assert len(lines) == 1 + 4

    def test_write_with_config_header(self, tmp_path):
        path = write_control_samples(tmp_path / "u.csv", ramp_control(1), header_lines=["kappa=1"])
        lines = path.read_text().splitlines()
        assert lines[:2] == ["# kappa=1", "t,u,reference"]
        assert lines[2].endswith(",nan")
