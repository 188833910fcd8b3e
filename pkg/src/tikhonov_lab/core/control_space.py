"""
Admissible controls for located (time-only) controls.

The discrete control is never stored on a grid: it is the clamp of the
piecewise-linear argument -q/alpha. Every integral below splits each time
interval at the points where the argument crosses a bound, so the clamped
function is linear on each piece and the integrals are exact.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence, Tuple, Union

import numpy as np

from tikhonov_lab.core.errors import DimensionMismatchError
from tikhonov_lab.core.mesh_fem import SparseOperator
from tikhonov_lab.core.time_grid import PiecewiseLinearScalar, TimePartition

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class AdmissibleBox:
    """Constant bounds lower <= u <= upper."""

    lower: float
    upper: float

    def __post_init__(self):
        if not self.lower <= self.upper:
            raise ValueError(f"lower bound {self.lower} exceeds upper bound {self.upper}")

    @property
    def width(self) -> float:
        return self.upper - self.lower

    @property
    def midpoint(self) -> float:
        return 0.5 * (self.lower + self.upper)

    @property
    def sigma(self) -> Optional[float]:
        """Margin sigma of a <= -sigma < 0 < sigma <= b, or None if 0 is not interior."""
        if self.lower < 0.0 < self.upper:
            return min(-self.lower, self.upper)
        return None

    def contains(self, v, tol: float = 0.0) -> bool:
        v = np.asarray(v)
        return bool(np.all((v >= self.lower - tol) & (v <= self.upper + tol)))

    def project(self, v):
        return np.clip(v, self.lower, self.upper)


def project_box(v, box: AdmissibleBox):
    """Componentwise median(a, v, b)."""
    return box.project(v)


@dataclass(frozen=True)
class ImplicitControl:
    """u(t) = clamp(-q(t) / alpha, a, b) with q piecewise linear in time."""

    alpha: float
    q: PiecewiseLinearScalar
    box: AdmissibleBox

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")

    @classmethod
    def constant(cls, value: float, partition: TimePartition, box: AdmissibleBox) -> "ImplicitControl":
        """Explicit constant control written in implicit form (alpha = 1, q = -value)."""
        if not box.contains(value):
            raise ValueError(f"constant control {value} is not admissible")
        q = PiecewiseLinearScalar(np.full(partition.M + 1, -float(value)), partition)
        return cls(alpha=1.0, q=q, box=box)

    @property
    def partition(self) -> TimePartition:
        return self.q.partition

    @property
    def argument(self) -> np.ndarray:
        """Nodal values of -q / alpha before clamping."""
        return -self.q.values / self.alpha

    @property
    def nodal_values(self) -> np.ndarray:
        return self.box.project(self.argument)

    def __call__(self, t):
        return self.box.project(-self.q(t) / self.alpha)


Reference = Union[float, ImplicitControl]


@dataclass(frozen=True)
class LocatedControlOperator:
    """B u = u(t) g1(x) and its adjoint B* p = (p(t), g1)."""

    mass: SparseOperator
    g1: np.ndarray
    w: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        g1 = np.asarray(self.g1, dtype=float)
        if g1.shape != (self.mass.dimension,):
            raise DimensionMismatchError(f"g1 must have {self.mass.dimension} values, got {g1.shape}")
        object.__setattr__(self, "g1", g1)
        object.__setattr__(self, "w", self.mass.matrix @ g1)

    def image(self, p_values: np.ndarray) -> np.ndarray:
        """q_m = w . p_m for each row."""
        p_values = np.asarray(p_values, dtype=float)
        if p_values.ndim != 2 or p_values.shape[1] != self.w.size:
            raise DimensionMismatchError(f"expected rows of length {self.w.size}, got {p_values.shape}")
        return p_values @ self.w


def apply_B_star(op: LocatedControlOperator, p) -> PiecewiseLinearScalar:
    """B* of an adjoint trajectory as a nodal function of time."""
    return PiecewiseLinearScalar(op.image(p.values), p.partition)


# Breakpoint machinery

def _split(partition: TimePartition, controls: Sequence[ImplicitControl]) -> Tuple[np.ndarray, np.ndarray]:
    """
    Sub-segment fractions (s_lo, s_hi) of shape (M, S) such that every control
    is linear on each sub-segment. Unused slots collapse to zero length.
    """
    columns = [np.zeros(partition.M), np.ones(partition.M)]
    for c in controls:
        if c.partition.M != partition.M:
            raise DimensionMismatchError("controls live on different partitions")
        v = c.argument
        v0, v1 = v[:-1], v[1:]
        dv = v1 - v0
        for level in (c.box.lower, c.box.upper):
            with np.errstate(divide="ignore", invalid="ignore"):
                lam = (level - v0) / dv
            columns.append(np.where((dv != 0) & (lam > 0) & (lam < 1), lam, 0.0))
    s = np.sort(np.column_stack(columns), axis=1)
    return s[:, :-1], s[:, 1:]


def _at(nodal: np.ndarray, s: np.ndarray) -> np.ndarray:
    """Linear interpolation of per-interval nodal values at fractions s."""
    v0 = nodal[:-1, None]
    return v0 + s * (nodal[1:, None] - v0)


def _control_at(c: ImplicitControl, s: np.ndarray) -> np.ndarray:
    return c.box.project(_at(c.argument, s))


def _reference_at(ref: Reference, s: np.ndarray) -> np.ndarray:
    if isinstance(ref, ImplicitControl):
        return _control_at(ref, s)
    return np.full_like(s, float(ref))


def _lengths(partition: TimePartition, s_lo: np.ndarray, s_hi: np.ndarray) -> np.ndarray:
    return partition.steps[:, None] * (s_hi - s_lo)


def _inactive(c: ImplicitControl, s_lo: np.ndarray, s_hi: np.ndarray) -> np.ndarray:
    mid = _at(c.argument, 0.5 * (s_lo + s_hi))
    return (mid > c.box.lower) & (mid < c.box.upper)


def _product_integral(L, f0, f1, g0, g1):
    """Exact integral of the product of two linear functions over a segment of length L."""
    return L / 6.0 * (2.0 * f0 * g0 + f0 * g1 + f1 * g0 + 2.0 * f1 * g1)


def _abs_integral(L, e0, e1):
    """Exact integral of |e| for linear e."""
    a0, a1 = np.abs(e0), np.abs(e1)
    same_sign = e0 * e1 >= 0
    denom = np.where(same_sign, 1.0, a0 + a1)
    return np.where(same_sign, 0.5 * L * (a0 + a1), 0.5 * L * (e0 ** 2 + e1 ** 2) / denom)


def _square_integral(L, e0, e1):
    return L * (e0 ** 2 + e0 * e1 + e1 ** 2) / 3.0


def control_hat_weights(u: ImplicitControl) -> np.ndarray:
    """Exact integrals of u against the hats phi_0..phi_M."""
    s_lo, s_hi = _split(u.partition, [u])
    L = _lengths(u.partition, s_lo, s_hi)
    u_lo, u_hi = _control_at(u, s_lo), _control_at(u, s_hi)
    out = np.zeros(u.partition.M + 1)
    out[:-1] += _product_integral(L, u_lo, u_hi, 1.0 - s_lo, 1.0 - s_hi).sum(axis=1)
    out[1:] += _product_integral(L, u_lo, u_hi, s_lo, s_hi).sum(axis=1)
    return out


def control_load(u: ImplicitControl, op: LocatedControlOperator,
                 drift: Optional[np.ndarray] = None) -> np.ndarray:
    """
    State load F_m = int (g0 + u g1) phi_m dt, m = 0..M-1.

    The control part is exact. drift is the precomputed (Gauss quadrature)
    load of g0 with the same (M, N) shape, or None for g0 = 0.
    """
    F = np.outer(control_hat_weights(u)[:-1], op.w)
    if drift is not None:
        if drift.shape != F.shape:
            raise DimensionMismatchError(f"drift load must have shape {F.shape}, got {drift.shape}")
        F += drift
    return F


def control_error_norms(u: ImplicitControl, ref: Reference) -> Tuple[float, float]:
    """(L1(I), L2(I)) distance to a constant or to another implicit control."""
    controls = [u, ref] if isinstance(ref, ImplicitControl) else [u]
    s_lo, s_hi = _split(u.partition, controls)
    L = _lengths(u.partition, s_lo, s_hi)
    e0 = _control_at(u, s_lo) - _reference_at(ref, s_lo)
    e1 = _control_at(u, s_hi) - _reference_at(ref, s_hi)
    l1 = float(np.sum(_abs_integral(L, e0, e1)))
    l2 = float(np.sqrt(np.sum(_square_integral(L, e0, e1))))
    return l1, l2


def control_inner(u: ImplicitControl, v: Reference) -> float:
    """Exact (u, v) in L2(I)."""
    controls = [u, v] if isinstance(v, ImplicitControl) else [u]
    s_lo, s_hi = _split(u.partition, controls)
    L = _lengths(u.partition, s_lo, s_hi)
    return float(np.sum(_product_integral(
        L, _control_at(u, s_lo), _control_at(u, s_hi), _reference_at(v, s_lo), _reference_at(v, s_hi)
    )))


def variational_residual(u: ImplicitControl, q: PiecewiseLinearScalar, alpha: float, v: Reference) -> float:
    """(alpha u + q, v - u) in L2(I); nonnegative for every admissible v at the optimum."""
    controls = [u, v] if isinstance(v, ImplicitControl) else [u]
    s_lo, s_hi = _split(u.partition, controls)
    L = _lengths(u.partition, s_lo, s_hi)
    u_lo, u_hi = _control_at(u, s_lo), _control_at(u, s_hi)
    g_lo = alpha * u_lo + _at(q.values, s_lo)
    g_hi = alpha * u_hi + _at(q.values, s_hi)
    d_lo = _reference_at(v, s_lo) - u_lo
    d_hi = _reference_at(v, s_hi) - u_hi
    return float(np.sum(_product_integral(L, g_lo, g_hi, d_lo, d_hi)))


def inactive_measure(u: ImplicitControl) -> float:
    """Measure of {t : a < u(t) < b}; ties with a bound count as active."""
    s_lo, s_hi = _split(u.partition, [u])
    L = _lengths(u.partition, s_lo, s_hi)
    return float(np.sum(L[_inactive(u, s_lo, s_hi)]))


def control_derivative_l1(u: ImplicitControl) -> float:
    """int |du/dt| dt, i.e. the variation of u over its inactive pieces."""
    s_lo, s_hi = _split(u.partition, [u])
    jumps = np.abs(_control_at(u, s_hi) - _control_at(u, s_lo))
    return float(np.sum(jumps[_inactive(u, s_lo, s_hi)]))


def level_set_measure(values: np.ndarray, partition: TimePartition, lo: float, hi: float) -> float:
    """Exact measure of {t : lo <= f(t) <= hi} for a piecewise-linear f given by nodal values."""
    values = np.asarray(values, dtype=float)
    if values.shape != (partition.M + 1,):
        raise DimensionMismatchError(f"expected {partition.M + 1} nodal values, got {values.shape}")
    if lo > hi:
        return 0.0
    f0, f1 = values[:-1], values[1:]
    df = f1 - f0
    flat = df == 0
    with np.errstate(divide="ignore", invalid="ignore"):
        sa = (lo - f0) / df
        sb = (hi - f0) / df
    s_min = np.clip(np.minimum(sa, sb), 0.0, 1.0)
    s_max = np.clip(np.maximum(sa, sb), 0.0, 1.0)
    inside_flat = ((f0 >= lo) & (f0 <= hi)).astype(float)
    fraction = np.where(flat, inside_flat, np.nan_to_num(s_max - s_min))
    return float(np.sum(partition.steps * fraction))


def band_measure(u: ImplicitControl, margin: Optional[float] = None) -> float:
    """
    Measure of the relaxed inactive band {alpha (a + eps) <= -q <= alpha (b - eps)}.

    margin defaults to sigma / 2; it must lie in (0, sigma).
    """
    sigma = u.box.sigma
    if sigma is None:
        raise ValueError("band measure needs bounds with a < 0 < b")
    eps = 0.5 * sigma if margin is None else margin
    if not 0 < eps < sigma:
        raise ValueError(f"margin must lie in (0, {sigma}), got {eps}")
    return level_set_measure(u.argument, u.partition, u.box.lower + eps, u.box.upper - eps)


def sample_control(u: ImplicitControl) -> Tuple[np.ndarray, np.ndarray]:
    """(t, u(t)) at time nodes and clamp breakpoints, sorted by t."""
    s_lo, _ = _split(u.partition, [u])
    t = u.partition.nodes[:-1, None] + u.partition.steps[:, None] * s_lo
    times = np.unique(np.concatenate([u.partition.nodes, t.ravel()]))
    return times, u(times)


def write_control_samples(path: Union[str, Path], u: ImplicitControl,
                          reference: Optional[Union[float, Callable]] = None,
                          header_lines: Optional[Sequence[str]] = None) -> Path:
    """CSV rows (t, u, reference) for control-versus-time plots, after optional "# key=value" lines."""
    path = Path(path)
    times, values = sample_control(u)
    if reference is None:
        ref = np.full_like(times, np.nan)
    elif callable(reference):
        ref = np.asarray(reference(times), dtype=float) * np.ones_like(times)
    else:
        ref = np.full_like(times, float(reference))
    header = "".join(f"# {line}\n" for line in header_lines or ()) + "t,u,reference"
    np.savetxt(path, np.column_stack([times, values, ref]), delimiter=",",
               header=header, comments="", fmt="%.16g")
    return path
