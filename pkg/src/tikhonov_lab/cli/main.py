"""
Command-line driver for the regularization lab.
Wires grids, backends, the fixed-point solver and the analysis into reproducible runs.
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence

import numpy as np

from tikhonov_lab.config.settings import Settings, get_settings
from tikhonov_lab.core.control_space import write_control_samples
from tikhonov_lab.core.errors import TikhonovLabError
from tikhonov_lab.core.models import RegPathRecord, RunConfig
from tikhonov_lab.services.analysis import (
    MISSING, build_eoc_table, emit_table, path_condition_report, write_records_jsonl
)
from tikhonov_lab.services.backends import BackendFactory, LocatedHeatBackend, ProblemBackend
from tikhonov_lab.services.tikhonov_solver import run_reg_path, solve_level
from tikhonov_lab.services.verification import run_convergence, run_verification

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_BAD_CONFIG = 2

TABLE_SUFFIXES = {"csv": "csv", "markdown": "md"}

# Flags that steer the driver itself and never reach RunConfig
_DRIVER_FLAGS = ("command", "config", "verbose")


# Configuration

def parse_levels(text: str) -> List[int]:
    """Levels as a comma list with optional ranges: "1,2,3", "1-6" or "3-6,8"."""
    levels: List[int] = []
    for part in str(text).split(","):
        part = part.strip()
        if not part:
            continue
        start, sep, stop = part.partition("-")
        if sep:
            lo, hi = int(start), int(stop)
            if hi < lo:
                raise ValueError(f"empty level range: {part}")
            levels.extend(range(lo, hi + 1))
        else:
            levels.append(int(part))
    if not levels:
        raise ValueError(f"no levels in {text!r}")
    return levels


def read_config_file(path: str) -> Dict[str, Any]:
    """
    Plain key=value config file; '#' starts a comment line.

    Keys are RunConfig field names, dashes allowed in place of underscores.
    """
    values: Dict[str, Any] = {}
    for number, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ValueError(f"{path}:{number}: expected key=value, got {line!r}")
        key = key.strip().replace("-", "_")
        if key not in RunConfig.model_fields or key == "command":
            raise ValueError(f"{path}:{number}: unknown config key {key!r}")
        value = value.strip()
        values[key] = parse_levels(value) if key == "levels" else value
    return values


def resolve_config(args: argparse.Namespace, settings: Settings) -> RunConfig:
    """Built-in defaults < Settings (env/.env) < config file < command-line flags."""
    values: Dict[str, Any] = {
        "n_per_side": settings.n_per_side,
        "time_steps": settings.time_steps,
        "end_time": settings.end_time,
        "gauss_order": settings.gauss_order,
        "tolerance": settings.tolerance,
        "max_iterations": settings.max_iterations,
        "linear_solver": settings.linear_solver,
        "cg_tolerance": settings.cg_tolerance,
        "residual_tolerance": settings.residual_tolerance,
        "output": settings.output_dir,
        "max_workers": settings.max_workers,
    }
    config_path = getattr(args, "config", None)
    if config_path:
        values.update(read_config_file(config_path))
    flags = {k: v for k, v in vars(args).items() if k not in _DRIVER_FLAGS}
    values.update(flags)

    config = RunConfig(command=args.command, **values)
    if config.reduced_scale:
        grid = {"n_per_side": settings.reduced_n_per_side, "time_steps": settings.reduced_time_steps}
        grid.update({k: flags[k] for k in grid if k in flags})
        config = config.model_copy(update=grid)
    if config.command == "solve" and config.alpha is None:
        raise ValueError("solve needs --alpha")
    config.fixed_point_config()  # raises on invalid fixed-point settings
    return config


def build_parser() -> argparse.ArgumentParser:
    # every option defaults to SUPPRESS so that only given flags override file and settings
    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)

    # Problem
    common.add_argument("--config", help="key=value file with RunConfig fields")
    common.add_argument("--example", choices=["located-heat", "poisson"])
    common.add_argument("--kappa", type=float, help="measure-condition exponent of the manufactured example")
    common.add_argument("--levels", type=parse_levels, help='levels l with alpha = 2^-l, e.g. "1-6"')
    common.add_argument("--alpha", type=float, help="single regularization weight (solve)")

    # Discretization
    common.add_argument("--n-per-side", type=int)
    common.add_argument("--time-steps", type=int)
    common.add_argument("--end-time", type=float)
    common.add_argument("--reduced-scale", action="store_true", help="17 nodes per side, 512 time steps")
    common.add_argument("--linear-solver", choices=["direct", "cg"])
    common.add_argument("--cg-tolerance", type=float, help="relative tolerance of conjugate gradients")
    common.add_argument("--residual-tolerance", type=float, help="largest accepted relative residual of a linear solve")

    # Fixed-point iteration
    common.add_argument("--tolerance", type=float)
    common.add_argument("--max-iterations", type=int)
    common.add_argument("--damping", type=float)
    common.add_argument("--warm-start", action="store_true")
    common.add_argument("--initial-control", choices=["lower", "upper", "zero"])
    common.add_argument("--max-workers", type=int)

    # Output
    common.add_argument("--output", help="output directory")
    common.add_argument("--format", choices=["csv", "markdown", "both"])
    common.add_argument("--full-range-fit", action="store_true", help="fit rates over every level")
    common.add_argument("--seed", type=int)
    common.add_argument("-v", "--verbose", action="count", help="debug logging")

    parser = argparse.ArgumentParser(
        prog="tikhonov-lab",
        description="Tikhonov regularization of bang-bang heat-equation control problems",
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("path", parents=[common], help="solve a regularization path and write EOC tables")
    sub.add_parser("solve", parents=[common], help="solve a single alpha")
    sub.add_parser("verify", parents=[common], help="run the property suite")
    sub.add_parser("convergence", parents=[common],
                   help="run the state and adjoint k-refinement and the h-refinement studies")
    return parser


# Output helpers

def _stem(config: RunConfig) -> str:
    if config.example == "located-heat":
        return f"{config.example}_kappa{config.kappa:g}"
    return config.example


def _output_dir(config: RunConfig) -> Path:
    out = Path(config.output)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _table_formats(config: RunConfig) -> List[str]:
    return ["csv", "markdown"] if config.format == "both" else [config.format]


def _fmt(value: Optional[float]) -> str:
    return MISSING if value is None else f"{value:.8f}"


def _write_json(path: Path, config: RunConfig, key: str, payload_json: str) -> Path:
    # round-trip through json so infinite exponents survive as Infinity
    path.write_text(json.dumps({"config": config.model_dump(), key: json.loads(payload_json)}, indent=2))
    return path


def _write_control_plots(out: Path, stem: str, backend: ProblemBackend, records: Sequence[RegPathRecord],
                         header: Sequence[str]) -> List[Path]:
    if not isinstance(backend, LocatedHeatBackend):
        return []
    written = []
    for record in records:
        if not record.succeeded:
            continue
        u = backend.control_from_q(record.alpha, np.asarray(record.q_values))
        tag = f"level{record.level}" if record.level is not None else f"alpha{record.alpha:g}"
        written.append(write_control_samples(out / f"{stem}_control_{tag}.csv", u,
                                             backend.problem.exact_control, header))
    return written


def _report_failures(records: Sequence[RegPathRecord]) -> int:
    failed = [r for r in records if not r.succeeded]
    for r in failed:
        print(f"level {r.level} (alpha={_fmt(r.alpha)}) failed: "
              f"{r.error_details.error_code}: {r.error_details.error_message}", file=sys.stderr)
    return EXIT_FAILURE if failed else EXIT_OK


# Commands

def cmd_path(config: RunConfig) -> int:
    """Regularization path: EOC tables, JSON-lines records, control samples and the rate report."""
    backend = BackendFactory.create_backend(config)
    records = run_reg_path(backend, config.levels, config.fixed_point_config(), config.max_workers)

    out = _output_dir(config)
    stem = _stem(config)
    header = config.header_lines()
    located = config.example == "located-heat"

    written = [write_records_jsonl(out / f"{stem}_records.jsonl", records, header)]
    table = build_eoc_table(records, kappa=config.kappa if located else None, n_per_side=config.n_per_side,
                            time_steps=config.time_steps, tolerance=config.tolerance)
    for fmt in _table_formats(config):
        path = out / f"{stem}_eoc.{TABLE_SUFFIXES[fmt]}"
        path.write_text(emit_table(table, fmt, header))
        written.append(path)
    written.extend(_write_control_plots(out, stem, backend, records, header))

    if sum(r.succeeded for r in records) >= 3:
        try:
            report = path_condition_report(records, kappa_expected=config.kappa if located else None,
                                           full_range=config.full_range_fit)
        except ValueError as e:
            logger.warning("Path report skipped", extra={"reason": str(e)})
        else:
            written.append(_write_json(out / f"{stem}_conditions.json", config, "report",
                                       report.model_dump_json()))
            print(f"inactive-set exponent: {_fmt(report.inactive_fit.exponent)}")

    print(emit_table(table, "markdown", header_lines=[]), end="")
    logger.info("Path outputs written", extra={"files": [str(p) for p in written]})
    return _report_failures(records)


def cmd_solve(config: RunConfig) -> int:
    """Single alpha: one record, control samples for the located-heat example."""
    backend = BackendFactory.create_backend(config)
    record, _ = solve_level(backend, config.alpha, config.fixed_point_config())

    out = _output_dir(config)
    stem = f"{_stem(config)}_alpha{config.alpha:g}"
    header = config.header_lines()
    written = [write_records_jsonl(out / f"{stem}.jsonl", [record], header)]
    written.extend(_write_control_plots(out, _stem(config), backend, [record], header))

    if record.succeeded:
        print(f"alpha={_fmt(record.alpha)} iterations={record.iterations} "
              f"err_l1={_fmt(record.err_l1)} err_l2={_fmt(record.err_l2)} objective={_fmt(record.objective)}")
    logger.info("Solve outputs written", extra={"files": [str(p) for p in written]})
    return _report_failures([record])


def cmd_verify(config: RunConfig) -> int:
    """Property suite; exit 0 iff every check passes."""
    report = run_verification(config)
    for check in report.checks:
        status = "PASS" if check.passed else "FAIL"
        print(f"{status} {check.name} value={_fmt(check.value)} threshold={_fmt(check.threshold)}")

    out = _output_dir(config)
    _write_json(out / "verify_report.json", config, "report", report.model_dump_json())
    print(f"{len(report.checks) - len(report.failed)}/{len(report.checks)} checks passed")
    return EXIT_OK if report.passed else EXIT_FAILURE


def cmd_convergence(config: RunConfig) -> int:
    """Refinement studies; exit nonzero when an observed order is below threshold."""
    studies = run_convergence(config)

    lines = [f"# {line}" for line in config.header_lines()]
    lines.append("kind,parameter,error,order")
    for study in studies:
        for row in study.rows:
            lines.append(f"{study.kind},{row.parameter:g},{_fmt(row.error)},{_fmt(row.order)}")
        verdict = "PASS" if study.passed else "FAIL"
        print(f"{verdict} {study.kind}: {study.quantity}, observed order {_fmt(study.observed_order)}")

    out = _output_dir(config)
    (out / "convergence.csv").write_text("\n".join(lines) + "\n")
    return EXIT_OK if all(s.passed for s in studies) else EXIT_FAILURE


COMMANDS: Dict[str, Callable[[RunConfig], int]] = {
    "path": cmd_path,
    "solve": cmd_solve,
    "verify": cmd_verify,
    "convergence": cmd_convergence,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)

    try:
        settings = get_settings()
    except ValueError:
        return EXIT_BAD_CONFIG
    if getattr(args, "verbose", 0):
        logging.getLogger().setLevel(logging.DEBUG)

    try:
        config = resolve_config(args, settings)
    except (ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_BAD_CONFIG

    logger.info("Command started", extra={"command": config.command, "example": config.example})
    try:
        code = COMMANDS[config.command](config)
    except TikhonovLabError as e:
        logger.error("Command failed", extra={"command": config.command, "error": str(e)})
        print(f"error: {e}", file=sys.stderr)
        code = EXIT_FAILURE
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        code = EXIT_BAD_CONFIG
    logger.info("Command finished", extra={"command": config.command, "exit_code": code})
    return code


if __name__ == "__main__":
    sys.exit(main())
