"""
Unit tests for the located-heat backend and the backend factory.
"""

from unittest.mock import patch

import numpy as np
import pytest

from tikhonov_lab.core.control_space import ImplicitControl
from tikhonov_lab.core.manufactured import make_located_heat_example
from tikhonov_lab.core.mesh_fem import build_uniform_mesh
from tikhonov_lab.core.models import RunConfig
from tikhonov_lab.core.parabolic_solver import ParabolicOperator
from tikhonov_lab.core.time_grid import build_uniform_partition
from tikhonov_lab.services.backends import BackendFactory, LocatedHeatBackend


@pytest.fixture(scope="module")
def backend():
    return LocatedHeatBackend.build(make_located_heat_example(1.0), n_per_side=5, time_steps=16)


def trapezoid(values, partition):
    return float(np.sum(0.5 * (values[1:] + values[:-1]) * partition.steps))


class TestLocatedHeatBackend:
    """Test the located-control heat backend."""

    def test_metadata(self, backend):
        assert backend.domain_measure == pytest.approx(0.5)
        assert backend.box.lower == -0.2
        assert backend.describe() == {
            "backend": "located-heat", "kappa": 1.0, "nodes": 25, "time_steps": 16
        }

    def test_initial_controls(self, backend):
        assert np.all(backend.initial_control("lower").nodal_values == -0.2)
        assert np.all(backend.initial_control("upper").nodal_values == 0.2)
        assert np.all(backend.initial_control("zero").nodal_values == 0.0)

    def test_evaluate_is_deterministic(self, backend):
        u = backend.initial_control("lower")
        q1 = backend.evaluate(u)
        q2 = backend.evaluate(u)
        assert q1.shape == (17,)
        assert np.array_equal(q1, q2)

    def test_q_vanishes_at_end_time(self, backend):
        q = backend.evaluate(backend.initial_control("upper"))
        assert q[-1] == 0.0

    def test_control_from_q(self, backend):
        q = np.linspace(-1.0, 1.0, 17)
        u = backend.control_from_q(2.0, q)
        assert isinstance(u, ImplicitControl)
        assert u.alpha == 2.0
        assert np.allclose(u.nodal_values, np.clip(-q / 2.0, -0.2, 0.2))

    def test_objective_gradient_is_q(self, backend):
        """d/dc of the tracking term at the constant control c equals the integral of q."""
        part = backend.partition
        h = 0.05

        def tracking(c):
            return backend.objective(ImplicitControl.constant(c, part, backend.box), 0.0)

        fd = (tracking(h) - tracking(-h)) / (2 * h)
        q = backend.evaluate(backend.initial_control("zero"))
        assert fd == pytest.approx(trapezoid(q, part), rel=1e-8)

    def test_objective_regularization_term(self, backend):
        u = backend.initial_control("lower")
        diff = backend.objective(u, 1.0) - backend.objective(u, 0.5)
        assert diff == pytest.approx(0.25 * 0.04 * 0.5, rel=1e-12)

    def test_distances(self, backend):
        u = backend.initial_control("lower")
        v = backend.initial_control("upper")
        assert backend.state_distance_sq(u, u) == 0.0
        assert backend.state_distance_sq(u, v) > 0.0
        assert backend.control_distance_sq(u, v) == pytest.approx(0.16 * 0.5, rel=1e-12)
        assert backend.control_inner(u, v) == pytest.approx(-0.02, rel=1e-12)

    def test_vi_residual_of_constant_control(self, backend):
        u = backend.initial_control("lower")
        q = np.zeros(17)
        # (alpha u, v - u) with u = -0.2
        assert backend.vi_residual(u, q, 1.0, 0.2) == pytest.approx(-0.2 * 0.4 * 0.5, rel=1e-12)
        assert backend.vi_residual(u, q, 1.0, -0.2) == 0.0

    def test_record_metrics_at_exact_control(self, backend):
        metrics = backend.record_metrics(backend.initial_control("lower"))
        assert metrics["err_l1"] == 0.0
        assert metrics["err_l2"] == 0.0
        assert metrics["inactive_measure"] == 0.0
        assert metrics["derivative_l1"] == 0.0
        assert metrics["band_measure"] == 0.0
        assert metrics["state_error"] >= 0.0

    def test_state_error_decreases_with_refinement(self):
        errors = []
        for n, M in ((5, 16), (9, 64)):
            b = LocatedHeatBackend.build(make_located_heat_example(1.0), n_per_side=n, time_steps=M)
            errors.append(b.state_error(b.state(b.initial_control("lower")).values))
        assert errors[1] < errors[0]

    def test_singular_target_uses_exact_weights(self):
        b = LocatedHeatBackend.build(make_located_heat_example(2.0), n_per_side=5, time_steps=16)
        assert np.array_equal(b.target_weights, b.problem.target_weights(b.partition))
        assert np.all(np.isfinite(b.evaluate(b.initial_control("lower"))))


class TestBackendFactory:
    """Test backend creation from run configurations."""

    def test_located_heat(self):
        config = RunConfig(command="solve", kappa=0.5, n_per_side=3, time_steps=4)
        backend = BackendFactory.create_backend(config)
        assert isinstance(backend, LocatedHeatBackend)
        assert backend.problem.kappa == 0.5
        assert backend.partition.M == 4

    def test_poisson(self):
        from tikhonov_lab.services.elliptic_backend import EllipticBackend
        config = RunConfig(command="verify", example="poisson", n_per_side=5)
        backend = BackendFactory.create_backend(config)
        assert isinstance(backend, EllipticBackend)
        assert backend.problem.mesh.node_count == 25

    def test_linear_solver_forwarded(self):
        config = RunConfig(command="solve", n_per_side=3, time_steps=4, linear_solver="cg")
        with patch.object(LocatedHeatBackend, "build", wraps=LocatedHeatBackend.build) as build:
            BackendFactory.create_backend(config)
        assert build.call_args.kwargs["linear_solver"] == "cg"

    def test_run_configuration_reaches_the_solver(self):
        config = RunConfig(command="path", n_per_side=3, time_steps=4, end_time=1.0,
                           cg_tolerance=1e-11, residual_tolerance=1e-9)
        backend = BackendFactory.create_backend(config)
        assert backend.partition.end_time == config.end_time
        assert backend.problem.end_time == config.end_time
        assert backend.domain_measure == pytest.approx(1.0)
        assert backend.operator.solver.cg_tolerance == 1e-11
        assert backend.operator.solver.residual_tolerance == 1e-9
        assert "end_time=1.0" in config.header_lines()

    def test_poisson_solver_tolerances(self):
        config = RunConfig(command="path", example="poisson", n_per_side=5,
                           cg_tolerance=1e-11, residual_tolerance=1e-9)
        solver = BackendFactory.create_backend(config).problem.solver
        assert (solver.cg_tolerance, solver.residual_tolerance) == (1e-11, 1e-9)

    def test_time_grid_must_match_problem(self):
        operator = ParabolicOperator(build_uniform_mesh(3), build_uniform_partition(4, 0.5))
        with pytest.raises(ValueError, match="time grid"):
            LocatedHeatBackend(make_located_heat_example(1.0, end_time=1.0), operator)
