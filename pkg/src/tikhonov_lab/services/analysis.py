"""
Convergence analysis of regularization paths.

EOC tables, log-log rate fits, estimators for the two measure conditions and
the derivative decay law, plus CSV/markdown/JSON-lines output.
"""

import csv
import io
import logging
import math
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Union

import numpy as np

from tikhonov_lab.core.control_space import level_set_measure
from tikhonov_lab.core.manufactured import ManufacturedProblem
from tikhonov_lab.core.models import EOCRow, EOCTable, PathConditionReport, RateFit, RegPathRecord
from tikhonov_lab.core.time_grid import PiecewiseLinearScalar

logger = logging.getLogger(__name__)

CSV_COLUMNS = ("level", "alpha", "err_l1", "err_l2", "eoc_l1", "eoc_l2")
MISSING = "/"
DEFAULT_FIT_WINDOW = 4
MEASURE_TOLERANCE = 0.15
DERIVATIVE_TOLERANCE = 0.2


# Rates

def _order(e_prev: float, e: float, a_prev: float, a: float) -> float:
    return math.log(e_prev / e) / math.log(a_prev / a)


def eoc(errors: Sequence[float], alphas: Optional[Sequence[float]] = None) -> List[float]:
    """
    Experimental orders log(e_{l-1} / e_l) / log(alpha_{l-1} / alpha_l), one per consecutive pair.

    alphas default to a halving sequence, which makes each order log2(e_{l-1} / e_l).
    """
    errors = [float(e) for e in errors]
    if len(errors) < 2:
        raise ValueError("eoc needs at least two errors")
    if any(e <= 0 for e in errors):
        raise ValueError(f"errors must be positive, got {errors}")
    if alphas is None:
        alphas = [2.0 ** (-i) for i in range(len(errors))]
    if len(alphas) != len(errors):
        raise ValueError(f"got {len(errors)} errors but {len(alphas)} alphas")
    return [_order(errors[i - 1], errors[i], alphas[i - 1], alphas[i]) for i in range(1, len(errors))]


def fit_rate(values: Sequence[float], alphas: Sequence[float], levels: Optional[Sequence[int]] = None) -> RateFit:
    """
    Least-squares fit of log(value) = log(constant) + exponent * log(alpha).

    Args:
        values: Positive quantities
        alphas: Matching positive parameters (alpha, or epsilon for level sets)
        levels: Labels stored on the fit; default 0..n-1

    Returns:
        RateFit with the RMS deviation of the log fit as residual

    Raises:
        ValueError: Fewer than three points, non-positive input or a single distinct alpha
    """
    v = np.asarray(values, dtype=float)
    a = np.asarray(alphas, dtype=float)
    if v.shape != a.shape:
        raise ValueError(f"got {v.size} values but {a.size} alphas")
    if v.size < 3:
        raise ValueError(f"rate fit needs at least 3 points, got {v.size}")
    if np.any(v <= 0) or np.any(a <= 0):
        raise ValueError("rate fit needs positive values and alphas")
    if np.unique(a).size < 2:
        raise ValueError("rate fit needs at least two distinct alphas")

    x, y = np.log(a), np.log(v)
    slope, intercept = np.polyfit(x, y, 1)
    residual = float(np.sqrt(np.mean((y - (slope * x + intercept)) ** 2)))
    return RateFit(
        exponent=float(slope),
        constant=float(np.exp(intercept)),
        residual=residual,
        levels=list(levels) if levels is not None else list(range(v.size)),
    )


# Measure conditions

MeasureSource = Union[PiecewiseLinearScalar, ManufacturedProblem]


def measure_condition_estimate(source: MeasureSource, epsilons: Sequence[float]) -> List[float]:
    """
    meas{t : |q(t)| <= eps} for each eps.

    A PiecewiseLinearScalar is measured exactly from its nodal values; a
    ManufacturedProblem delegates to the closed form of its exact adjoint image.
    """
    eps = [float(e) for e in epsilons]
    if any(e <= 0 for e in eps):
        raise ValueError(f"epsilons must be positive, got {eps}")
    if any(b < a for a, b in zip(eps, eps[1:])):
        raise ValueError("epsilons must be sorted")

    if isinstance(source, ManufacturedProblem):
        return [source.exact_zero_measure(e) for e in eps]
    if isinstance(source, PiecewiseLinearScalar):
        return [level_set_measure(source.values, source.partition, -e, e) for e in eps]
    raise TypeError(f"cannot measure level sets of {type(source).__name__}")


def fit_measure_condition(source: MeasureSource, epsilons: Sequence[float]) -> RateFit:
    """Fit meas{|q| <= eps} ~ C eps^kappa; the exponent estimates kappa, the constant C."""
    return fit_rate(measure_condition_estimate(source, epsilons), epsilons)


def _fit_with_zeros(values: Sequence[float], alphas: Sequence[float], levels: Sequence[int]) -> RateFit:
    """
    Rate fit that follows the kappa = infinity convention.

    Zero measures are dropped; if fewer than three positive values remain and
    at least one zero was seen, the exponent is infinite.
    """
    keep = [(v, a, l) for v, a, l in zip(values, alphas, levels) if v > 0]
    if len(keep) < len(values) and len(keep) < 3:
        return RateFit(exponent=math.inf, levels=list(levels))
    v, a, l = zip(*keep)
    return fit_rate(v, a, l)


def path_condition_report(records: Iterable[RegPathRecord], kappa_expected: Optional[float] = None,
                          full_range: bool = False, window: int = DEFAULT_FIT_WINDOW) -> PathConditionReport:
    """
    Fit meas(I_alpha), the relaxed band, ||du/dt||_L1 and the state error against alpha.

    Only successful records are used. Unless full_range is set, fits use the
    last `window` levels, where the path is closest to asymptotic.
    """
    usable = sorted((r for r in records if r.succeeded), key=lambda r: -r.alpha)
    if len(usable) < 3:
        raise ValueError(f"path report needs at least 3 successful records, got {len(usable)}")
    if not full_range:
        usable = usable[-max(window, 3):]

    alphas = [r.alpha for r in usable]
    levels = [r.level if r.level is not None else i for i, r in enumerate(usable)]

    def column(name: str) -> Optional[List[float]]:
        values = [getattr(r, name) for r in usable]
        return None if any(v is None for v in values) else values

    inactive = column("inactive_measure")
    if inactive is None:
        raise ValueError("records carry no inactive-set measure")
    inactive_fit = _fit_with_zeros(inactive, alphas, levels)

    band = column("band_measure")
    derivative = column("derivative_l1")
    state = column("state_error")
    report = PathConditionReport(
        kappa_expected=kappa_expected,
        inactive_fit=inactive_fit,
        band_fit=_fit_with_zeros(band, alphas, levels) if band is not None else None,
        derivative_fit=_fit_with_zeros(derivative, alphas, levels) if derivative is not None else None,
        state_error_fit=_fit_with_zeros(state, alphas, levels) if state is not None else None,
        # the decay bound needs a bounded time derivative of B*p, which holds for kappa <= 1 only
        derivative_bound_applicable=kappa_expected is None or kappa_expected <= 1.0,
    )

    if kappa_expected is not None:
        if not inactive_fit.is_infinite and inactive_fit.exponent < kappa_expected - MEASURE_TOLERANCE:
            report.measure_condition_violated = True
            logger.warning(
                "Inactive-set measure decays slower than the measure condition predicts",
                extra={"exponent": inactive_fit.exponent, "kappa": kappa_expected}
            )
        if report.derivative_bound_applicable and report.derivative_fit is not None:
            report.derivative_bound_satisfied = (
                report.derivative_fit.exponent >= kappa_expected - 1.0 - DERIVATIVE_TOLERANCE
            )
    return report


# Tables

def build_eoc_table(records: Iterable[RegPathRecord], kappa: Optional[float] = None,
                    n_per_side: Optional[int] = None, time_steps: Optional[int] = None,
                    tolerance: Optional[float] = None) -> EOCTable:
    """One row per successful level; EOC only where the previous level is present."""
    usable = sorted(
        (r for r in records if r.succeeded and r.level is not None
         and r.err_l1 is not None and r.err_l2 is not None),
        key=lambda r: r.level,
    )
    rows: List[EOCRow] = []
    for i, r in enumerate(usable):
        row = EOCRow(level=r.level, alpha=r.alpha, err_l1=r.err_l1, err_l2=r.err_l2)
        prev = usable[i - 1] if i > 0 else None
        if prev is not None and prev.level == r.level - 1:
            if prev.err_l1 > 0 and r.err_l1 > 0:
                row.eoc_l1 = _order(prev.err_l1, r.err_l1, prev.alpha, r.alpha)
            if prev.err_l2 > 0 and r.err_l2 > 0:
                row.eoc_l2 = _order(prev.err_l2, r.err_l2, prev.alpha, r.alpha)
        rows.append(row)
    return EOCTable(rows=rows, kappa=kappa, n_per_side=n_per_side, time_steps=time_steps, tolerance=tolerance)


def _fmt(value: Optional[float]) -> str:
    return MISSING if value is None else f"{value:.8f}"


def _header(table: EOCTable, header_lines: Optional[Sequence[str]]) -> List[str]:
    if header_lines is not None:
        return list(header_lines)
    meta = table.model_dump(exclude={"rows"})
    return [f"{k}={meta[k]}" for k in sorted(meta) if meta[k] is not None]


def emit_table(table: EOCTable, fmt: str = "csv", header_lines: Optional[Sequence[str]] = None) -> str:
    """
    Render an EOC table as CSV or markdown.

    header_lines (key=value) are embedded as comments; they default to the
    table's own grid metadata.
    """
    header = _header(table, header_lines)
    if fmt == "csv":
        buf = io.StringIO()
        for line in header:
            buf.write(f"# {line}\n")
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for row in table.rows:
            writer.writerow([row.level, _fmt(row.alpha), _fmt(row.err_l1), _fmt(row.err_l2),
                             _fmt(row.eoc_l1), _fmt(row.eoc_l2)])
        return buf.getvalue()

    if fmt == "markdown":
        lines = [f"<!-- {line} -->" for line in header]
        lines.append("| level | L1 error | L2 error | EOC L1 | EOC L2 |")
        lines.append("|---|---|---|---|---|")
        for row in table.rows:
            lines.append(f"| {row.level} | {_fmt(row.err_l1)} | {_fmt(row.err_l2)} "
                         f"| {_fmt(row.eoc_l1)} | {_fmt(row.eoc_l2)} |")
        return "\n".join(lines) + "\n"

    raise ValueError(f"unsupported table format: {fmt}")


def parse_table_csv(text: str) -> EOCTable:
    """Inverse of emit_table(fmt="csv"); known metadata keys are read back from the comment header."""
    meta = {}
    body = []
    for line in text.splitlines():
        if line.startswith("# "):
            key, _, value = line[2:].partition("=")
            meta[key] = value
        elif line:
            body.append(line)

    reader = csv.DictReader(body)
    if tuple(reader.fieldnames or ()) != CSV_COLUMNS:
        raise ValueError(f"unexpected table columns: {reader.fieldnames}")

    def number(cell: str) -> Optional[float]:
        return None if cell == MISSING else float(cell)

    rows = [
        EOCRow(level=int(r["level"]), alpha=float(r["alpha"]), err_l1=float(r["err_l1"]),
               err_l2=float(r["err_l2"]), eoc_l1=number(r["eoc_l1"]), eoc_l2=number(r["eoc_l2"]))
        for r in reader
    ]

    def known(key: str, cast):
        value = meta.get(key)
        return None if value in (None, "None") else cast(value)

    return EOCTable(
        rows=rows,
        kappa=known("kappa", float),
        n_per_side=known("n_per_side", int),
        time_steps=known("time_steps", int),
        tolerance=known("tolerance", float),
    )


# Record dumps

def write_records_jsonl(path: Union[str, Path], records: Iterable[RegPathRecord],
                        header_lines: Optional[Sequence[str]] = None) -> Path:
    """One RegPathRecord per line, for external plotting, after optional "# key=value" lines."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w") as fh:
        for line in header_lines or ():
            fh.write(f"# {line}\n")
        for record in records:
            fh.write(record.model_dump_json() + "\n")
    return path


def read_records_jsonl(path: Union[str, Path]) -> List[RegPathRecord]:
    with Path(path).open() as fh:
        return [RegPathRecord.model_validate_json(line) for line in fh
                if line.strip() and not line.startswith("#")]
