"""Smoothing kernels and the kernel-smoothed check loss.

The quantile check loss rho_tau(u) = u * (tau - 1{u < 0}) is convolved with a
scaled kernel K_h(u) = K(u/h)/h, producing a smooth convex surrogate.  Closed
forms are implemented per kernel; all functions are vectorized over ``u``.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr

_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def _phi(u):
    """Standard normal density; avoids frozen-distribution call overhead."""
    return _INV_SQRT_2PI * np.exp(-0.5 * np.square(u))

GAUSSIAN = "gaussian"
UNIFORM = "uniform"
KERNELS = (GAUSSIAN, UNIFORM)


@dataclass(frozen=True)
class KernelSpec:
    """A symmetric, non-negative smoothing kernel integrating to one."""

    kind: str = GAUSSIAN

    def __post_init__(self):
        if self.kind not in KERNELS:
            raise ValueError(f"unknown kernel kind {self.kind!r}; expected one of {KERNELS}")

    @property
    def second_moment(self) -> float:
        # integral of u^2 K(u) du
        return 1.0 if self.kind == GAUSSIAN else 1.0 / 3.0


@dataclass(frozen=True)
class SmoothedLossParams:
    """Quantile level, bandwidth and kernel for the smoothed check loss."""

    tau: float
    h: float
    kernel: KernelSpec = field(default_factory=KernelSpec)

    def __post_init__(self):
        if not 0.0 < self.tau < 1.0:
            raise ValueError(f"tau must be in (0, 1), got {self.tau}")
        if self.h <= 0.0:
            raise ValueError(f"bandwidth must be positive, got {self.h}")


def kernel_density(kernel: KernelSpec, u):
    """Evaluate the kernel density K(u)."""
    u = np.asarray(u, dtype=float)
    if kernel.kind == GAUSSIAN:
        return _phi(u)
    return np.where(np.abs(u) <= 1.0, 0.5, 0.0)


def kernel_cdf(kernel: KernelSpec, u):
    """Evaluate the integrated kernel, the CDF of the kernel density."""
    u = np.asarray(u, dtype=float)
    if kernel.kind == GAUSSIAN:
        return ndtr(u)
    return np.clip(0.5 * (u + 1.0), 0.0, 1.0)


def check_loss(u, tau: float):
    """Non-smooth check (pinball) loss rho_tau(u) = u * (tau - 1{u < 0})."""
    u = np.asarray(u, dtype=float)
    return u * (tau - (u < 0))


def smoothed_check_loss(params: SmoothedLossParams, u):
    """Check loss convolved with the scaled kernel, evaluated at ``u``."""
    tau, h = params.tau, params.h
    u = np.asarray(u, dtype=float)
    if params.kernel.kind == GAUSSIAN:
        return h * _phi(u / h) + u * (tau - ndtr(-u / h))
    # uniform kernel: quadratic inside [-h, h], equals the check loss outside
    absu = np.abs(u)
    inside = (tau - 0.5) * u + h * (0.25 * (u / h) ** 2 + 0.25)
    outside = (tau - 0.5) * u + 0.5 * absu
    return np.where(absu < h, inside, outside)


def smoothed_check_derivative(params: SmoothedLossParams, u):
    """Derivative of the smoothed check loss; lies in (tau - 1, tau)."""
    u = np.asarray(u, dtype=float)
    return params.tau - kernel_cdf(params.kernel, -u / params.h)


def gradient_weight(params: SmoothedLossParams, residuals):
    """Per-observation gradient factor Kbar(-r/h) - tau; lies in [-tau, 1 - tau].

    The gradient of the smoothed loss in a linear model is the mean of
    ``gradient_weight(r_i) * x_i`` over observations with residuals
    r_i = y_i - x_i' beta.
    """
    residuals = np.asarray(residuals, dtype=float)
    return kernel_cdf(params.kernel, -residuals / params.h) - params.tau
