"""
Fixed-point solver for the Tikhonov-regularized problem and the regularization path.

Each level solves u = P_[a,b](-q(u) / alpha), q = B*p, by plain fixed-point
iteration on q. The solver only talks to a ProblemBackend, so the same code
drives the located-control heat problem and the Poisson problem.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from tikhonov_lab.core.errors import ConvergenceError, LinearSolveError, TikhonovLabError
from tikhonov_lab.core.models import ErrorDetails, FixedPointConfig, RegPathRecord
from tikhonov_lab.services.backends import ProblemBackend

logger = logging.getLogger(__name__)

SLOW_CONTRACTION_ITERATIONS = 100


@dataclass
class FixedPointResult:
    """
    Outcome of one fixed-point solve.

    `q` is the argument that defines `control` through the projection formula
    (the damped iterate when damping is on). `final_residual` compares it with
    q evaluated once more at the returned control.

    Unpacks as (control, iterations).
    """

    control: Any
    q: np.ndarray
    iterations: int
    final_difference: float
    final_residual: float
    vi_residuals: Dict[str, float] = field(default_factory=dict)
    damping: float = 1.0
    warm_started: bool = False

    def __iter__(self) -> Iterator[Any]:
        return iter((self.control, self.iterations))


def level_alpha(level: int) -> float:
    return 2.0 ** (-level)


def solve_fixed_point(backend: ProblemBackend, alpha: float, cfg: Optional[FixedPointConfig] = None,
                      initial: Any = None, level: Optional[int] = None) -> FixedPointResult:
    """
    Iterate u^{i+1} = P(-q^{i+1} / alpha) with q^{i+1} = B*p(u^i).

    Args:
        backend: Problem backend
        alpha: Regularization weight, positive
        cfg: Iteration settings; defaults to FixedPointConfig()
        initial: Starting control; overrides cfg.initial_control (warm starts)
        level: Only used to label log lines

    Returns:
        FixedPointResult

    Raises:
        ValueError: If alpha is not positive
        ConvergenceError: If sup |q^i - q^{i-1}| stays above the tolerance for max_iterations evaluations
    """
    if not alpha > 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    cfg = cfg or FixedPointConfig()
    theta = cfg.damping

    u = initial if initial is not None else backend.initial_control(cfg.initial_control)
    q_prev: Optional[np.ndarray] = None
    q_used: Optional[np.ndarray] = None
    difference = math.inf
    iterations = 0

    while iterations < cfg.max_iterations:
        q = backend.evaluate(u)
        iterations += 1
        if q_prev is not None:
            difference = backend.sup_difference(q, q_prev)
        q_prev = q

        q_used = q if q_used is None or theta == 1.0 else (1.0 - theta) * q_used + theta * q
        u = backend.control_from_q(alpha, q_used)

        logger.debug(
            "Fixed-point iteration",
            extra={"level": level, "alpha": alpha, "iteration": iterations, "sup_difference": difference}
        )
        if difference < cfg.tolerance:
            break
    else:
        raise ConvergenceError(
            f"fixed point did not converge for alpha={alpha} within {cfg.max_iterations} iterations "
            f"(last sup-difference {difference:.3e})",
            iterations=iterations,
            last_difference=difference,
        )

    if iterations > SLOW_CONTRACTION_ITERATIONS:
        logger.warning(
            "Slow contraction of the fixed-point iteration",
            extra={"level": level, "alpha": alpha, "iterations": iterations}
        )

    # a-posteriori check: stagnation of q is not optimality
    q_final = backend.evaluate(u)
    final_residual = backend.sup_difference(q_final, q_used)
    box = backend.box
    vi_residuals = {
        "lower": backend.vi_residual(u, q_final, alpha, box.lower),
        "upper": backend.vi_residual(u, q_final, alpha, box.upper),
        "mid": backend.vi_residual(u, q_final, alpha, box.midpoint),
    }
    limit = -cfg.tolerance * box.width * backend.domain_measure
    violated = {k: v for k, v in vi_residuals.items() if v < limit}
    if violated:
        logger.warning(
            "Variational inequality violated beyond the fixed-point tolerance",
            extra={"level": level, "alpha": alpha, "residuals": violated, "limit": limit}
        )

    return FixedPointResult(
        control=u,
        q=np.asarray(q_used),
        iterations=iterations,
        final_difference=difference,
        final_residual=final_residual,
        vi_residuals=vi_residuals,
        damping=theta,
        warm_started=initial is not None,
    )


def _failed_record(level: Optional[int], alpha: float, cfg: FixedPointConfig, code: str,
                   message: str, iterations: int = 0,
                   last_difference: Optional[float] = None) -> RegPathRecord:
    logger.error(
        "Regularization level failed",
        extra={"level": level, "alpha": alpha, "error_code": code, "error_message": message}
    )
    return RegPathRecord(
        level=level,
        alpha=alpha,
        status="FAILED",
        iterations=iterations,
        damping=cfg.damping,
        final_difference=last_difference,
        error_details=ErrorDetails(error_code=code, error_message=message),
    )


def solve_level(backend: ProblemBackend, alpha: float, cfg: Optional[FixedPointConfig] = None,
                level: Optional[int] = None, initial: Any = None) -> Tuple[RegPathRecord, Any]:
    """
    Solve one level and turn the result into a record.

    Failures never propagate; they come back as FAILED records with a None control.
    """
    cfg = cfg or FixedPointConfig()
    logger.info("Starting regularization level", extra={"level": level, "alpha": alpha})

    try:
        result = solve_fixed_point(backend, alpha, cfg, initial=initial, level=level)
        metrics = backend.record_metrics(result.control)
        objective = backend.objective(result.control, alpha)
    except ConvergenceError as e:
        return _failed_record(level, alpha, cfg, "NON_CONVERGENCE", str(e),
                              iterations=e.iterations, last_difference=e.last_difference), None
    except LinearSolveError as e:
        return _failed_record(level, alpha, cfg, "LINEAR_SOLVE_FAILED", str(e)), None
    except (TikhonovLabError, ValueError) as e:
        return _failed_record(level, alpha, cfg, "INVALID_INPUT", str(e)), None

    record = RegPathRecord(
        level=level,
        alpha=alpha,
        iterations=result.iterations,
        q_values=result.q.tolist(),
        objective=objective,
        damping=result.damping,
        warm_started=result.warm_started,
        final_difference=result.final_difference,
        final_residual=result.final_residual,
        vi_residuals=result.vi_residuals,
        **metrics,
    )
    logger.info(
        "Regularization level completed",
        extra={
            "level": level,
            "alpha": alpha,
            "iterations": record.iterations,
            "err_l1": record.err_l1,
            "err_l2": record.err_l2,
        }
    )
    return record, result.control


def run_reg_path(backend: ProblemBackend, levels: Sequence[int], cfg: Optional[FixedPointConfig] = None,
                 max_workers: int = 1) -> List[RegPathRecord]:
    """
    Solve alpha = 2^-l for every level, in the given order.

    Levels are independent unless cfg.warm_start is set, in which case each
    level starts from the previous level's control and the path runs
    sequentially. Independent levels go through a thread pool when
    max_workers > 1; records come back in level order either way.
    """
    if not levels:
        raise ValueError("levels must not be empty")
    cfg = cfg or FixedPointConfig()
    logger.info(
        "Running regularization path",
        extra={"levels": list(levels), "warm_start": cfg.warm_start, "max_workers": max_workers,
               **backend.describe()}
    )

    if cfg.warm_start or max_workers <= 1:
        records = []
        previous = None
        for level in levels:
            initial = previous if cfg.warm_start else None
            record, control = solve_level(backend, level_alpha(level), cfg, level=level, initial=initial)
            records.append(record)
            if control is not None:
                previous = control
        return records

    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        futures = [pool.submit(solve_level, backend, level_alpha(level), cfg, level) for level in levels]
        return [f.result()[0] for f in futures]


def monotonicity_slack(backend: ProblemBackend, alpha: float, u: Any, alpha_prime: float, u_prime: Any) -> float:
    """
    (alpha - alpha') (u_alpha, u_alpha' - u_alpha) - |y_alpha' - y_alpha|^2 - alpha' |u_alpha' - u_alpha|^2.

    Nonnegative for exact minimizers.
    """
    rhs = (alpha - alpha_prime) * (backend.control_inner(u, u_prime) - backend.control_inner(u, u))
    lhs = backend.state_distance_sq(u_prime, u) + alpha_prime * backend.control_distance_sq(u_prime, u)
    return float(rhs - lhs)


def check_monotonicity_inequality(backend: ProblemBackend, record: RegPathRecord,
                                  record_prime: RegPathRecord) -> float:
    """Slack of the stability inequality between two records; controls are rebuilt from q_values."""
    for rec in (record, record_prime):
        if not rec.succeeded:
            raise ValueError(f"record for alpha={rec.alpha} did not succeed")
    u = backend.control_from_q(record.alpha, np.asarray(record.q_values))
    u_prime = backend.control_from_q(record_prime.alpha, np.asarray(record_prime.q_values))
    return monotonicity_slack(backend, record.alpha, u, record_prime.alpha, u_prime)
