"""
Configuration, record and report models for the regularization lab.
Records are what the solver hands to analysis and what the CLI serializes.
"""

import math
from typing import Dict, List, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator


# Solver configuration

class FixedPointConfig(BaseModel):
    """Projection-formula fixed-point iteration settings."""
    tolerance: float = Field(default=1e-5, description="Stop when sup_t |q_i - q_{i-1}| falls below this")
    max_iterations: int = Field(default=10000, description="Iteration budget per level")
    initial_control: str = Field(default="lower", description="Starting control: lower, upper or zero")
    damping: float = Field(default=1.0, description="Relaxation factor on q; 1 means plain iteration")
    warm_start: bool = Field(default=False, description="Start level l+1 from the control of level l")

    @field_validator('tolerance')
    @classmethod
    def validate_tolerance(cls, v):
        if v <= 0:
            raise ValueError(f'tolerance must be positive, got {v}')
        return v

    @field_validator('max_iterations')
    @classmethod
    def validate_max_iterations(cls, v):
        if v < 1:
            raise ValueError(f'max_iterations must be at least 1, got {v}')
        return v

    @field_validator('initial_control')
    @classmethod
    def validate_initial_control(cls, v):
        if v not in ('lower', 'upper', 'zero'):
            raise ValueError('initial_control must be one of lower, upper, zero')
        return v

    @field_validator('damping')
    @classmethod
    def validate_damping(cls, v):
        if not 0 < v <= 1:
            raise ValueError(f'damping must lie in (0, 1], got {v}')
        return v


# Path records

class ErrorDetails(BaseModel):
    """Error details for failed levels."""
    error_code: Optional[str] = Field(None, description="Error code")
    error_message: Optional[str] = Field(None, description="Error message")


class RegPathRecord(BaseModel):
    """Result of one regularization level."""
    model_config = ConfigDict(ser_json_inf_nan='constants')

    level: Optional[int] = Field(None, description="Level l, alpha = 2^-l; empty for a single-alpha solve")
    alpha: float = Field(..., description="Regularization weight")
    status: str = Field(default="SUCCESS", description="SUCCESS or FAILED")
    iterations: int = Field(default=0, description="Fixed-point iterations performed")
    q_values: List[float] = Field(default_factory=list, description="Final B*p at time nodes (or nodal p)")
    err_l1: Optional[float] = Field(None, description="L1(I) control error against the exact control")
    err_l2: Optional[float] = Field(None, description="L2(I) control error against the exact control")
    state_error: Optional[float] = Field(None, description="L2(I,L2) state error against the exact state")
    inactive_measure: Optional[float] = Field(None, description="Measure of the inactive set I_alpha")
    band_measure: Optional[float] = Field(None, description="Measure of the relaxed inactive band")
    derivative_l1: Optional[float] = Field(None, description="L1 norm of the control's time derivative")
    objective: Optional[float] = Field(None, description="Regularized objective without the tracking constant")
    damping: float = Field(default=1.0, description="Relaxation factor used")
    warm_started: bool = Field(default=False, description="Whether the level started from a previous control")
    final_difference: Optional[float] = Field(None, description="Last sup-difference of q")
    final_residual: Optional[float] = Field(None, description="sup-difference between q of the returned control and the q defining it")
    vi_residuals: Dict[str, float] = Field(default_factory=dict, description="(alpha u + q, v - u) per direction")
    error_details: Optional[ErrorDetails] = Field(None, description="Error details if the level failed")

    @field_validator('alpha')
    @classmethod
    def validate_alpha(cls, v):
        if v <= 0:
            raise ValueError(f'alpha must be positive, got {v}')
        return v

    @field_validator('err_l1', 'err_l2', 'state_error', 'inactive_measure', 'band_measure', 'derivative_l1')
    @classmethod
    def validate_nonnegative(cls, v):
        if v is not None and v < 0:
            raise ValueError(f'error quantities must be nonnegative, got {v}')
        return v

    @property
    def succeeded(self) -> bool:
        return self.status == "SUCCESS"


# Analysis models

class EOCRow(BaseModel):
    level: int
    alpha: float
    err_l1: float
    err_l2: float
    eoc_l1: Optional[float] = None
    eoc_l2: Optional[float] = None


class EOCTable(BaseModel):
    """Errors and EOC in the control, one row per level."""
    rows: List[EOCRow] = Field(default_factory=list)
    kappa: Optional[float] = Field(None, description="Measure-condition exponent of the example")
    n_per_side: Optional[int] = None
    time_steps: Optional[int] = None
    tolerance: Optional[float] = None


class RateFit(BaseModel):
    """Least-squares power law value ~ constant * alpha^exponent."""
    model_config = ConfigDict(ser_json_inf_nan='constants')

    exponent: float = Field(..., description="Slope in log(alpha) - log(value)")
    constant: Optional[float] = Field(None, description="Prefactor; absent when the exponent is infinite")
    residual: Optional[float] = Field(None, description="RMS deviation of the log fit")
    levels: List[int] = Field(default_factory=list, description="Levels the fit used")

    @property
    def is_infinite(self) -> bool:
        return math.isinf(self.exponent)


class PathConditionReport(BaseModel):
    """Empirical check of the measure conditions and the derivative decay along a path."""
    model_config = ConfigDict(ser_json_inf_nan='constants')

    kappa_expected: Optional[float] = None
    inactive_fit: RateFit
    band_fit: Optional[RateFit] = None
    derivative_fit: Optional[RateFit] = None
    state_error_fit: Optional[RateFit] = Field(None, description="Reported for information, never gated")
    measure_condition_violated: bool = False
    derivative_bound_applicable: bool = True
    derivative_bound_satisfied: Optional[bool] = None


class CheckResult(BaseModel):
    """One property check of the verification suite."""
    model_config = ConfigDict(ser_json_inf_nan='constants')

    name: str
    passed: bool
    value: Optional[float] = Field(None, description="Measured quantity")
    threshold: Optional[float] = Field(None, description="Limit the quantity was compared against")
    details: Optional[str] = None


class VerificationReport(BaseModel):
    checks: List[CheckResult] = Field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    @property
    def failed(self) -> List[CheckResult]:
        return [c for c in self.checks if not c.passed]


class ConvergenceRow(BaseModel):
    parameter: float = Field(..., description="Refinement parameter (time steps or nodes per side)")
    error: float
    order: Optional[float] = None


class ConvergenceStudy(BaseModel):
    """Refinement study with observed orders between consecutive rows."""
    kind: str = Field(..., description="time, adjoint-time, space or zero")
    quantity: str = Field(..., description="Which error was measured")
    rows: List[ConvergenceRow] = Field(default_factory=list)
    threshold: float = Field(default=1.8, description="Minimum acceptable observed order")

    @property
    def observed_order(self) -> Optional[float]:
        orders = [r.order for r in self.rows if r.order is not None]
        return min(orders) if orders else None

    @property
    def passed(self) -> bool:
        if self.kind == "zero":
            return all(r.error == 0.0 for r in self.rows)
        order = self.observed_order
        return order is not None and order >= self.threshold


# CLI configuration

class RunConfig(BaseModel):
    """Fully resolved configuration of one CLI command."""
    command: str
    example: str = Field(default="located-heat", description="located-heat or poisson")
    kappa: float = Field(default=1.0, description="Measure-condition exponent of the manufactured example")
    levels: List[int] = Field(default_factory=lambda: [1, 2, 3, 4, 5, 6])
    alpha: Optional[float] = Field(None, description="Single regularization weight for the solve command")
    n_per_side: int = 33
    time_steps: int = 2048
    end_time: float = 0.5
    gauss_order: int = 3
    tolerance: float = 1e-5
    max_iterations: int = 10000
    damping: float = 1.0
    warm_start: bool = False
    initial_control: str = "lower"
    linear_solver: str = "direct"
    cg_tolerance: float = 1e-13
    residual_tolerance: float = 1e-12
    output: str = "results"
    format: str = "both"
    seed: int = 0
    reduced_scale: bool = False
    full_range_fit: bool = False
    max_workers: int = 1

    @field_validator('command')
    @classmethod
    def validate_command(cls, v):
        if v not in ('path', 'solve', 'verify', 'convergence'):
            raise ValueError(f'unknown command: {v}')
        return v

    @field_validator('example')
    @classmethod
    def validate_example(cls, v):
        if v not in ('located-heat', 'poisson'):
            raise ValueError('example must be located-heat or poisson')
        return v

    @field_validator('kappa', 'end_time', 'tolerance', 'cg_tolerance', 'residual_tolerance')
    @classmethod
    def validate_positive(cls, v):
        if v <= 0:
            raise ValueError(f'value must be positive, got {v}')
        return v

    @field_validator('levels')
    @classmethod
    def validate_levels(cls, v):
        if not v:
            raise ValueError('levels must not be empty')
        return v

    @field_validator('n_per_side')
    @classmethod
    def validate_nodes(cls, v):
        if v < 2:
            raise ValueError('n_per_side must be at least 2')
        return v

    @field_validator('time_steps', 'max_iterations', 'max_workers')
    @classmethod
    def validate_counts(cls, v):
        if v < 1:
            raise ValueError('counts must be at least 1')
        return v

    @field_validator('format')
    @classmethod
    def validate_format(cls, v):
        if v not in ('csv', 'markdown', 'both'):
            raise ValueError('format must be csv, markdown or both')
        return v

    def fixed_point_config(self) -> FixedPointConfig:
        return FixedPointConfig(
            tolerance=self.tolerance,
            max_iterations=self.max_iterations,
            initial_control=self.initial_control,
            damping=self.damping,
            warm_start=self.warm_start,
        )

    def header_lines(self) -> List[str]:
        """key=value echo of every resolved field, for embedding in output files."""
        data = self.model_dump()
        return [f"{key}={data[key]}" for key in sorted(data)]
