"""
Property suites and refinement studies behind the verify and convergence commands.

Everything here runs at toy scale and returns pydantic report models; the
CLI decides exit codes from them.
"""

import logging
from typing import List, Optional, Sequence

import numpy as np

from tikhonov_lab.core.control_space import AdmissibleBox, project_box
from tikhonov_lab.core.manufactured import EIGENVALUE, g1, make_located_heat_example
from tikhonov_lab.core.mesh_fem import assemble, build_uniform_mesh, interpolate, l2_error
from tikhonov_lab.core.models import (
    CheckResult, ConvergenceRow, ConvergenceStudy, FixedPointConfig, RunConfig, VerificationReport
)
from tikhonov_lab.core.parabolic_solver import ParabolicOperator, separable_load
from tikhonov_lab.core.time_grid import (
    PiecewiseLinearScalar, TimePartition, build_uniform_partition, char_weights, hat_weights
)
from tikhonov_lab.services.analysis import eoc, fit_measure_condition, measure_condition_estimate
from tikhonov_lab.services.backends import LocatedHeatBackend, ProblemBackend
from tikhonov_lab.services.elliptic_backend import EllipticBackend, gradient_check, make_poisson_example
from tikhonov_lab.services.tikhonov_solver import check_monotonicity_inequality, run_reg_path

logger = logging.getLogger(__name__)

ADJOINTNESS_TOLERANCE = 1e-10
SLACK_TOLERANCE = 1e-6
GRADIENT_TOLERANCE = 1e-6
ESTIMATOR_TOLERANCE = 1e-4
TIME_STUDY_NODES = 65


def _result(name: str, passed: bool, value: Optional[float] = None, threshold: Optional[float] = None,
            details: Optional[str] = None) -> CheckResult:
    result = CheckResult(name=name, passed=bool(passed), value=value, threshold=threshold, details=details)
    if passed:
        logger.info("Check passed", extra={"check": name, "value": value})
    else:
        logger.error("Check failed", extra={"check": name, "value": value, "threshold": threshold})
    return result


# Property checks

def check_adjointness(seed: int = 0, n_per_side: int = 3, time_steps: int = 8, pairs: int = 100) -> CheckResult:
    """Discrete duality <H, S F> = <S* H, F> on random loads and initial values."""
    rng = np.random.default_rng(seed)
    # uneven steps so the transpose structure is exercised with k_m != k_{m+1}
    steps = rng.uniform(0.5, 1.5, time_steps)
    nodes = np.concatenate([[0.0], np.cumsum(steps / steps.sum() * 0.5)])
    operator = ParabolicOperator(build_uniform_mesh(n_per_side), TimePartition(nodes))

    worst = 0.0
    for _ in range(pairs):
        F = rng.standard_normal(operator.shape)
        H = rng.standard_normal(operator.shape)
        y0 = rng.standard_normal(operator.mesh.node_count)
        worst = max(worst, operator.check_adjointness(F, H, y0))
    return _result("adjointness", worst <= ADJOINTNESS_TOLERANCE, worst, ADJOINTNESS_TOLERANCE,
                   f"{pairs} random load pairs, {n_per_side}x{n_per_side} nodes, M={time_steps}")


def check_projection(seed: int = 0, samples: int = 1000) -> CheckResult:
    """Projection onto the box is idempotent, lands in the box and is nonexpansive."""
    rng = np.random.default_rng(seed)
    box = AdmissibleBox(-0.2, 0.2)
    v, w = rng.normal(scale=0.5, size=(2, samples))
    pv, pw = project_box(v, box), project_box(w, box)
    violation = max(
        float(np.max(np.abs(project_box(pv, box) - pv))),
        float(np.max(np.abs(pv - pw) - np.abs(v - w))),
        0.0 if box.contains(pv) else 1.0,
    )
    return _result("projection", violation <= 0.0, violation, 0.0)


def check_measure_estimator(seed: int = 0, samples: int = 1_000_000) -> List[CheckResult]:
    """Exact level-set measures against a sampling scan, and the closed-form fit per kappa."""
    rng = np.random.default_rng(seed)
    part = build_uniform_partition(7, 1.0)
    q = PiecewiseLinearScalar(rng.normal(scale=0.3, size=8), part)
    t = (np.arange(samples) + 0.5) / samples
    values = np.abs(q(t))
    eps = [0.05, 0.1, 0.2]
    exact = measure_condition_estimate(q, eps)
    deviation = max(abs(m - np.count_nonzero(values <= e) / samples) for e, m in zip(eps, exact))
    results = [_result("level_set_measure", deviation <= ESTIMATOR_TOLERANCE, deviation, ESTIMATOR_TOLERANCE)]

    for kappa in (0.3, 0.5, 1.0, 2.0):
        fit = fit_measure_condition(make_located_heat_example(kappa), np.geomspace(1e-4, 1e-2, 8))
        ok = abs(fit.exponent - kappa) <= 0.05 and abs(fit.constant / 4.0 ** kappa - 1.0) <= 0.1
        results.append(_result(f"measure_condition_kappa_{kappa}", ok, fit.exponent, kappa,
                               f"constant {fit.constant:.6f}"))
    return results


def check_path_properties(backend: ProblemBackend, levels: Sequence[int], cfg: FixedPointConfig,
                          label: str) -> List[CheckResult]:
    """Stability inequality between consecutive levels and the variational inequality per level."""
    records = run_reg_path(backend, levels, cfg)
    failed = [r.level for r in records if not r.succeeded]
    if failed:
        return [_result(f"{label}_path", False, details=f"levels {failed} failed")]

    slacks = [check_monotonicity_inequality(backend, a, b) for a, b in zip(records, records[1:])]
    worst_slack = min(slacks) if slacks else 0.0

    limit = cfg.tolerance * backend.box.width * backend.domain_measure
    worst_vi = min(min(r.vi_residuals.values()) for r in records)

    objectives = [r.objective for r in records]
    # alpha decreases along the path, so the optimal value must not increase
    energy_gap = max([b - a for a, b in zip(objectives, objectives[1:])] + [0.0])

    return [
        _result(f"{label}_stability_slack", worst_slack >= -SLACK_TOLERANCE, worst_slack, -SLACK_TOLERANCE),
        _result(f"{label}_variational_inequality", worst_vi >= -limit, worst_vi, -limit),
        _result(f"{label}_energy_monotone", energy_gap <= SLACK_TOLERANCE, energy_gap, SLACK_TOLERANCE),
    ]


def check_gradient(seed: int = 0, n_per_side: int = 5) -> CheckResult:
    rng = np.random.default_rng(seed)
    problem = make_poisson_example(build_uniform_mesh(n_per_side))
    u = rng.uniform(problem.box.lower, problem.box.upper, problem.control_size)
    direction = rng.standard_normal(problem.control_size)
    mismatch = gradient_check(problem, u, direction)
    return _result("elliptic_gradient", mismatch <= GRADIENT_TOLERANCE, mismatch, GRADIENT_TOLERANCE)


def run_verification(config: RunConfig) -> VerificationReport:
    """
    Toy-scale property suite.

    located-heat checks the parabolic backend's path; poisson checks the
    elliptic backend's path and its finite-difference gradient.
    """
    logger.info("Running verification suite", extra={"example": config.example, "seed": config.seed})
    report = VerificationReport()
    report.checks.append(check_adjointness(config.seed))
    report.checks.append(check_projection(config.seed))
    report.checks.extend(check_measure_estimator(config.seed))

    cfg = FixedPointConfig(tolerance=1e-9, max_iterations=config.max_iterations,
                           damping=config.damping, initial_control=config.initial_control)
    if config.example == "located-heat":
        backend = LocatedHeatBackend.build(
            make_located_heat_example(config.kappa, end_time=config.end_time), n_per_side=5, time_steps=16
        )
        report.checks.extend(check_path_properties(backend, [1, 2, 3, 4], cfg, "located_heat"))
    else:
        backend = EllipticBackend(make_poisson_example(build_uniform_mesh(5)))
        cfg = cfg.model_copy(update={"tolerance": 1e-10})
        report.checks.extend(check_path_properties(backend, [5, 6, 7, 8], cfg, "poisson"))
        report.checks.append(check_gradient(config.seed))

    logger.info("Verification finished",
                extra={"checks": len(report.checks), "failed": [c.name for c in report.failed]})
    return report


# Refinement studies

def _orders(kind: str, quantity: str, parameters: Sequence[float], sizes: Sequence[float],
            errors: Sequence[float], threshold: float) -> ConvergenceStudy:
    orders = [None] + eoc(errors, sizes)
    rows = [ConvergenceRow(parameter=p, error=e, order=o) for p, e, o in zip(parameters, errors, orders)]
    study = ConvergenceStudy(kind=kind, quantity=quantity, rows=rows, threshold=threshold)
    logger.info("Refinement study finished",
                extra={"kind": kind, "observed_order": study.observed_order, "passed": study.passed})
    return study


def time_refinement_study(steps: Sequence[int] = (64, 128, 256, 512), n_per_side: int = TIME_STUDY_NODES,
                          end_time: float = 0.5, threshold: float = 1.8) -> ConvergenceStudy:
    """
    Temporal order of the state scheme on y(t) = c(t) v with v the interpolant of g1.

    The load is manufactured from the semi-discrete equation M y' + K y = f, so
    the spatial error is zero and the error at the interval midpoints is
    purely temporal.
    """
    mesh = build_uniform_mesh(n_per_side)
    mass, stiff = assemble(mesh, "mass"), assemble(mesh, "stiffness")
    v = interpolate(mesh, g1)
    v[mesh.boundary_mask] = 0.0
    profile = make_located_heat_example(1.0, end_time=end_time)
    c, dc = profile.state_profile, profile.state_profile_derivative

    errors, sizes = [], []
    for M in steps:
        part = build_uniform_partition(M, end_time)
        operator = ParabolicOperator(mesh, part, mass, stiff)
        load = (separable_load(hat_weights(dc, part)[:-1], mass.matrix @ v)
                + separable_load(hat_weights(c, part)[:-1], stiff.matrix @ v))
        y = operator.solve_state(load, c(0.0) * v).values
        e = y - np.outer(c(part.midpoints), v)
        me = (mass.matrix @ e.T).T
        errors.append(float(np.sqrt(np.sum(part.steps * np.einsum("mi,mi->m", e, me)))))
        sizes.append(part.k)
    return _orders("time", f"L2(I,L2) state error at midpoints, n_per_side={n_per_side}",
                   list(steps), sizes, errors, threshold)


def adjoint_time_refinement_study(steps: Sequence[int] = (64, 128, 256, 512), n_per_side: int = TIME_STUDY_NODES,
                                  end_time: float = 0.5, threshold: float = 1.8) -> ConvergenceStudy:
    """
    Temporal order of the adjoint scheme on p(t) = sin(omega (T_e - t)) v, v the interpolant of g1.

    The load H_m is manufactured from -M p' + K p = h, so the spatial error is
    zero. The error is the largest nodal L2(Omega) error over t_0..t_M.
    """
    mesh = build_uniform_mesh(n_per_side)
    mass, stiff = assemble(mesh, "mass"), assemble(mesh, "stiffness")
    v = interpolate(mesh, g1)
    v[mesh.boundary_mask] = 0.0
    omega = 4.0 * np.pi / end_time

    def c(t):
        return np.sin(omega * (end_time - np.asarray(t)))

    def minus_dc(t):
        return omega * np.cos(omega * (end_time - np.asarray(t)))

    errors, sizes = [], []
    for M in steps:
        part = build_uniform_partition(M, end_time)
        operator = ParabolicOperator(mesh, part, mass, stiff)
        load = (separable_load(char_weights(minus_dc, part), mass.matrix @ v)
                + separable_load(char_weights(c, part), stiff.matrix @ v))
        p = operator.solve_adjoint(load).values
        e = p - np.outer(c(part.nodes), v)
        me = (mass.matrix @ e.T).T
        errors.append(float(np.sqrt(np.einsum("mi,mi->m", e, me).max())))
        sizes.append(part.k)
    return _orders("adjoint-time", f"max nodal L2 adjoint error, n_per_side={n_per_side}",
                   list(steps), sizes, errors, threshold)


def space_refinement_study(sides: Sequence[int] = (5, 9, 17, 33), time_steps: int = 32,
                           end_time: float = 0.5, threshold: float = 1.8) -> ConvergenceStudy:
    """
    Spatial order on the steady solution y = g1 of y' - Laplace y = 2 pi^2 g1.

    The run starts from the discrete steady state, so the computed trajectory is constant
    in time and the error is the P1 error alone.
    """
    errors, sizes = [], []
    for n in sides:
        mesh = build_uniform_mesh(n)
        part = build_uniform_partition(time_steps, end_time)
        operator = ParabolicOperator(mesh, part)
        v = interpolate(mesh, g1)
        source = EIGENVALUE * (operator.mass.matrix @ v)
        steady = operator.solver.solve(source, 0.0, 1.0)
        load = separable_load(hat_weights(np.ones_like, part)[:-1], source)
        y = operator.solve_state(load, steady).values
        sq = sum(k * l2_error(mesh, y_m, g1) ** 2 for k, y_m in zip(part.steps, y))
        errors.append(float(np.sqrt(sq)))
        sizes.append(mesh.h)
    return _orders("space", "L2(I,L2) state error", list(sides), sizes, errors, threshold)


def zero_data_study(sides: Sequence[int] = (3, 5, 9), time_steps: int = 8) -> ConvergenceStudy:
    """Zero loads and zero initial value must give identically zero state and adjoint."""
    rows = []
    for n in sides:
        operator = ParabolicOperator(build_uniform_mesh(n), build_uniform_partition(time_steps, 0.5))
        zero = np.zeros(operator.shape)
        y = operator.solve_state(zero).values
        p = operator.solve_adjoint(zero).values
        rows.append(ConvergenceRow(parameter=n, error=float(max(np.abs(y).max(), np.abs(p).max()))))
    return ConvergenceStudy(kind="zero", quantity="max of sup |y| and sup |p|", rows=rows)


def run_convergence(config: RunConfig) -> List[ConvergenceStudy]:
    logger.info("Running refinement studies",
                extra={"end_time": config.end_time, "time_study_nodes": TIME_STUDY_NODES})
    return [
        time_refinement_study(end_time=config.end_time),
        adjoint_time_refinement_study(end_time=config.end_time),
        space_refinement_study(end_time=config.end_time),
        zero_data_study(),
    ]
