"""
Manufactured located-control heat problem with a known bang-bang solution.

All fields are separable, time profile times g1(x) = sin(pi x1) sin(pi x2),
with -Laplace g1 = 2 pi^2 g1 and ||g1||^2 = 1/4. The exact adjoint
p(t, x) = (T_e - t)^(1/kappa) g1(x) is positive before T_e, so the exact
control sits on the lower bound everywhere.
"""

import logging
from dataclasses import dataclass
from typing import Callable, Tuple

import numpy as np

from tikhonov_lab.core.control_space import AdmissibleBox
from tikhonov_lab.core.time_grid import TimePartition

logger = logging.getLogger(__name__)

G1_NORM_SQ = 0.25
EIGENVALUE = 2.0 * np.pi ** 2


def g1(x, y):
    return np.sin(np.pi * x) * np.sin(np.pi * y)


@dataclass(frozen=True)
class SeparableField:
    """f(t, x) = time_profile(t) * space_profile(x)."""

    time_profile: Callable[[np.ndarray], np.ndarray]
    space_profile: Callable[[np.ndarray, np.ndarray], np.ndarray]

    def __call__(self, t, x, y):
        return self.time_profile(t) * self.space_profile(x, y)


@dataclass(frozen=True)
class ManufacturedProblem:
    kappa: float
    end_time: float = 0.5
    frequency_factor: float = 2.0
    lower: float = -0.2
    upper: float = 0.2

    def __post_init__(self):
        if not self.kappa > 0:
            raise ValueError(f"kappa must be positive, got {self.kappa}")
        if not self.end_time > 0:
            raise ValueError(f"end_time must be positive, got {self.end_time}")

    @property
    def box(self) -> AdmissibleBox:
        return AdmissibleBox(self.lower, self.upper)

    @property
    def exact_control(self) -> float:
        return self.lower

    @property
    def g1(self) -> Callable:
        return g1

    # time profiles

    def _remaining(self, t):
        return np.maximum(self.end_time - np.asarray(t, dtype=float), 0.0)

    def state_profile(self, t):
        return np.cos(2.0 * np.pi * self.frequency_factor * np.asarray(t) / self.end_time)

    def state_profile_derivative(self, t):
        omega = 2.0 * np.pi * self.frequency_factor / self.end_time
        return -omega * np.sin(omega * np.asarray(t))

    def adjoint_profile(self, t):
        return self._remaining(t) ** (1.0 / self.kappa)

    def target_profile(self, t):
        """Time factor of y_d; unbounded at T_e when kappa > 1."""
        r = self._remaining(t)
        with np.errstate(divide="ignore"):
            return (self.state_profile(t)
                    - r ** (1.0 / self.kappa - 1.0) / self.kappa
                    - EIGENVALUE * r ** (1.0 / self.kappa))

    def target_weights(self, partition: TimePartition) -> np.ndarray:
        """
        Exact integrals of the y_d time factor over I_1..I_M.

        Every term has a closed-form antiderivative, so the (T_e - t)^(1/kappa - 1)
        singularity on the last interval costs nothing in accuracy.
        """
        t = partition.nodes
        r = self._remaining(t)
        a = 1.0 / self.kappa
        omega = 2.0 * np.pi * self.frequency_factor / self.end_time
        antiderivative = (np.sin(omega * t) / omega
                          + r ** a
                          + EIGENVALUE * r ** (a + 1.0) / (a + 1.0))
        return np.diff(antiderivative)

    def drift_profile(self, t):
        """Time factor of g0 = dy/dt - Laplace y - B u_exact."""
        return (self.state_profile_derivative(t)
                + EIGENVALUE * self.state_profile(t)
                - self.exact_control)

    # fields

    @property
    def initial_state(self) -> Callable:
        return g1

    @property
    def drift(self) -> SeparableField:
        return SeparableField(self.drift_profile, g1)

    @property
    def target(self) -> SeparableField:
        return SeparableField(self.target_profile, g1)

    @property
    def exact_state(self) -> SeparableField:
        return SeparableField(self.state_profile, g1)

    @property
    def exact_adjoint(self) -> SeparableField:
        return SeparableField(self.adjoint_profile, g1)

    def exact_adjoint_image(self, t):
        """B* p_exact(t) = ||g1||^2 (T_e - t)^(1/kappa)."""
        return G1_NORM_SQ * self.adjoint_profile(t)

    def exact_zero_measure(self, eps: float) -> float:
        return exact_zero_measure(eps, self.kappa, self.end_time)

    def pde_residuals(self, t, x, y) -> Tuple[np.ndarray, np.ndarray]:
        """
        Finite-difference residuals of the state identity
        dy/dt - Laplace y - (g0 + u g1) = 0 and the adjoint identity
        -dp/dt - Laplace p - (y - y_d) = 0 at points with t < T_e.
        """
        t, x, y = (np.asarray(v, dtype=float) for v in (t, x, y))
        dt = np.minimum(1e-4, (self.end_time - t) / 100.0)
        hx = 1e-3

        def d_dt(f):
            return (-f(t + 2 * dt) + 8 * f(t + dt) - 8 * f(t - dt) + f(t - 2 * dt)) / (12 * dt)

        def laplace(field):
            def second(shift):
                return (-shift(2 * hx) + 16 * shift(hx) - 30 * shift(0.0)
                        + 16 * shift(-hx) - shift(-2 * hx)) / (12 * hx ** 2)
            return (second(lambda s: field(t, x + s, y))
                    + second(lambda s: field(t, x, y + s)))

        y_bar, p_bar = self.exact_state, self.exact_adjoint
        state = (d_dt(lambda s: y_bar(s, x, y)) - laplace(y_bar)
                 - self.drift(t, x, y) - self.exact_control * g1(x, y))
        adjoint = (-d_dt(lambda s: p_bar(s, x, y)) - laplace(p_bar)
                   - (y_bar(t, x, y) - self.target(t, x, y)))
        return state, adjoint


def make_located_heat_example(kappa: float, end_time: float = 0.5) -> ManufacturedProblem:
    return ManufacturedProblem(kappa=kappa, end_time=end_time)


def exact_zero_measure(eps: float, kappa: float, end_time: float = 0.5) -> float:
    """meas{t in [0, T_e] : |B* p_exact(t)| <= eps} = min(T_e, (4 eps)^kappa)."""
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")
    return float(min(end_time, (4.0 * eps) ** kappa))
