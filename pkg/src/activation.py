"""Hat-ReLU activation and its mollified family.

The mollifier is the compactly supported bump

    rho(y) = Z exp(-tan(pi y / 2)^2 / 2)   for |y| < 1,   0 otherwise,

and sigma_tau = rho_tau * relu with rho_tau = tau rho(tau .). The regularized
hat activation is sigma_H,tau(y) = sigma_tau(y+1) - sigma_tau(2y) + sigma_tau(y-1).

Everything is tabulated once on [-1, 1] (density, CDF and the antiderivative
of the CDF) and evaluated through cubic Hermite splines whose derivative
data are the next table down, so value/d1/d2 stay mutually consistent.
"""

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Union

import numpy as np
from loguru import logger
from scipy.integrate import simpson, trapezoid
from scipy.interpolate import CubicHermiteSpline

from src.errors import ConfigurationError, DomainError
from src.utils.defaults import TABLE_RESOLUTION, TABLE_RESOLUTION_MIN

ArrayLike = Union[float, np.ndarray]


def _bump(y: np.ndarray) -> np.ndarray:
    """Unnormalized mollifier, defined as 0 on |y| >= 1 (removable limit)."""
    y = np.asarray(y, dtype=float)
    out = np.zeros_like(y)
    inside = np.abs(y) < 1.0
    t = np.tan(0.5 * np.pi * y[inside])
    with np.errstate(over="ignore", under="ignore"):
        out[inside] = np.exp(-0.5 * t * t)
    return out


def _bump_slope(y: np.ndarray) -> np.ndarray:
    """Derivative of the unnormalized mollifier."""
    y = np.asarray(y, dtype=float)
    out = np.zeros_like(y)
    inside = np.abs(y) < 1.0
    t = np.tan(0.5 * np.pi * y[inside])
    with np.errstate(over="ignore", under="ignore", invalid="ignore"):
        f = np.exp(-0.5 * t * t)
        slope = -f * t * (1.0 + t * t) * (0.5 * np.pi)
    out[inside] = np.where(f > 0.0, slope, 0.0)
    return out


def _cumulative_hermite(values: np.ndarray, slopes: np.ndarray, h: float) -> np.ndarray:
    """Cumulative integral on a uniform grid, exact for piecewise cubic Hermite data."""
    increments = 0.5 * h * (values[:-1] + values[1:]) + (h * h / 12.0) * (slopes[:-1] - slopes[1:])
    return np.concatenate(([0.0], np.cumsum(increments)))


@dataclass(frozen=True, eq=False)
class MollifierTable:
    """Tabulated mollifier on [-1, 1].

    Attributes:
        normalization: Z, so that rho integrates to one
        y: grid nodes on [-1, 1]
        rho: density at the nodes
        cdf: cumulative distribution at the nodes
        antiderivative: G(z) = integral of the CDF from -1 to z
        resolution: number of grid intervals
    """
    normalization: float
    y: np.ndarray
    rho: np.ndarray
    cdf: np.ndarray
    antiderivative: np.ndarray
    resolution: int
    _cdf_spline: CubicHermiteSpline = field(repr=False)
    _antiderivative_spline: CubicHermiteSpline = field(repr=False)

    def density(self, z: ArrayLike) -> np.ndarray:
        """rho(z), evaluated from the closed form (zero outside (-1, 1))."""
        return self.normalization * _bump(z)

    def cumulative(self, z: ArrayLike) -> np.ndarray:
        """CDF(z) with z clamped to [-1, 1]."""
        z = np.asarray(z, dtype=float)
        out = np.where(z >= 1.0, 1.0, 0.0)
        inside = np.abs(z) < 1.0
        if np.any(inside):
            out[inside] = self._cdf_spline(z[inside])
        return out

    def integrated_cumulative(self, z: ArrayLike) -> np.ndarray:
        """G(z): 0 below -1, z above 1, tabulated in between."""
        z = np.asarray(z, dtype=float)
        out = np.where(z >= 1.0, z, 0.0)
        inside = np.abs(z) < 1.0
        if np.any(inside):
            out[inside] = self._antiderivative_spline(z[inside])
        return out


def build_mollifier(resolution: int = TABLE_RESOLUTION) -> MollifierTable:
    """
    Tabulate the mollifier, its CDF and the antiderivative of its CDF.

    Args:
        resolution: Number of grid intervals on [-1, 1] (>= 64)

    Returns:
        Immutable MollifierTable
    """
    if resolution < TABLE_RESOLUTION_MIN:
        raise ConfigurationError(
            f"mollifier resolution {resolution} below minimum {TABLE_RESOLUTION_MIN}"
        )

    y = np.linspace(-1.0, 1.0, resolution + 1)
    h = 2.0 / resolution
    bump = _bump(y)
    z_norm = 1.0 / simpson(bump, x=y)

    rho = z_norm * bump
    slope = z_norm * _bump_slope(y)

    cdf = _cumulative_hermite(rho, slope, h)
    cdf /= cdf[-1]
    # even density: CDF(-y) = 1 - CDF(y)
    cdf = 0.5 * (cdf + 1.0 - cdf[::-1])

    antiderivative = _cumulative_hermite(cdf, rho, h)
    # G(z) - G(-z) = z
    antiderivative = 0.5 * (antiderivative + antiderivative[::-1] + y)

    table = MollifierTable(
        normalization=float(z_norm),
        y=y,
        rho=rho,
        cdf=cdf,
        antiderivative=antiderivative,
        resolution=resolution,
        _cdf_spline=CubicHermiteSpline(y, cdf, rho),
        _antiderivative_spline=CubicHermiteSpline(y, antiderivative, cdf),
    )
    logger.debug(f"Built mollifier table: resolution={resolution}, Z={z_norm:.12f}")
    return table


@lru_cache(maxsize=4)
def default_table(resolution: int = TABLE_RESOLUTION) -> MollifierTable:
    """Shared table instance (tables are immutable, so sharing is safe)."""
    return build_mollifier(resolution)


@dataclass
class ActivationEval:
    """sigma_H,tau and its first two derivatives at one point or an array of points."""
    value: ArrayLike
    d1: ArrayLike
    d2: ArrayLike


def _check_tau(tau: float) -> None:
    if not tau > 0:
        raise DomainError(f"mollification parameter tau must be positive, got {tau}")


def _scalar_or_array(x: np.ndarray, scalar: bool) -> ArrayLike:
    return float(x) if scalar else x


def softplus_tau(y: ArrayLike, tau: float, table: MollifierTable) -> ArrayLike:
    """
    Mollified ReLU sigma_tau(y) = integral of rho(t) relu(y - t/tau) dt.

    Exactly y for y >= 1/tau and exactly 0 for y <= -1/tau.
    """
    _check_tau(tau)
    scalar = np.isscalar(y)
    y = np.asarray(y, dtype=float)
    z = tau * y
    out = np.where(z >= 1.0, y, table.integrated_cumulative(z) / tau)
    out = np.where(z <= -1.0, 0.0, out)
    return _scalar_or_array(out, scalar)


def hrelu(y: ArrayLike) -> ArrayLike:
    """Exact hat function: 1 - |y| on [-1, 1], zero elsewhere."""
    scalar = np.isscalar(y)
    out = np.maximum(1.0 - np.abs(np.asarray(y, dtype=float)), 0.0)
    return _scalar_or_array(out, scalar)


def hrelu_derivative(y: ArrayLike) -> ArrayLike:
    """Almost-everywhere derivative of the hat function (0 at the kinks)."""
    scalar = np.isscalar(y)
    y = np.asarray(y, dtype=float)
    out = np.where((y > -1.0) & (y < 0.0), 1.0, 0.0)
    out = np.where((y > 0.0) & (y < 1.0), -1.0, out)
    return _scalar_or_array(out, scalar)


def hrelu_tau(y: ArrayLike, tau: float, table: MollifierTable) -> ActivationEval:
    """
    Regularized hat activation with first and second derivatives.

    Args:
        y: Point or array of points
        tau: Mollification parameter (> 0)
        table: Mollifier table

    Returns:
        ActivationEval(value, d1, d2), scalars for scalar input
    """
    _check_tau(tau)
    scalar = np.isscalar(y)
    y = np.asarray(y, dtype=float)

    value = (softplus_tau(y + 1.0, tau, table)
             - softplus_tau(2.0 * y, tau, table)
             + softplus_tau(y - 1.0, tau, table))
    # identically zero past the outer kinks
    value = np.where(np.abs(y) >= 1.0 + 1.0 / tau, 0.0, value)
    d1 = (table.cumulative(tau * (y + 1.0))
          - 2.0 * table.cumulative(2.0 * tau * y)
          + table.cumulative(tau * (y - 1.0)))
    d2 = tau * (table.density(tau * (y + 1.0))
                - 4.0 * table.density(2.0 * tau * y)
                + table.density(tau * (y - 1.0)))

    return ActivationEval(
        value=_scalar_or_array(value, scalar),
        d1=_scalar_or_array(d1, scalar),
        d2=_scalar_or_array(d2, scalar),
    )


def h1_gap(tau: float, grid_n: int = 200_000, table: MollifierTable = None) -> float:
    """
    Numerical H^1(R) norm of sigma_H - sigma_H,tau.

    The difference vanishes outside [-1 - 1/tau, 1 + 1/tau], so the trapezoid
    rule runs on [-3, 3] (tau >= 1).

    Args:
        tau: Mollification parameter (>= 1)
        grid_n: Number of trapezoid intervals (>= 1000)
        table: Mollifier table (shared default when omitted)
    """
    if tau < 1.0:
        raise DomainError(f"h1_gap requires tau >= 1, got {tau}")
    if grid_n < 1000:
        raise ConfigurationError(f"h1_gap grid_n must be >= 1000, got {grid_n}")
    table = table or default_table()

    y = np.linspace(-3.0, 3.0, grid_n + 1)
    smooth = hrelu_tau(y, tau, table)
    diff = hrelu(y) - smooth.value
    ddiff = hrelu_derivative(y) - smooth.d1
    gap = float(np.sqrt(trapezoid(diff * diff, y) + trapezoid(ddiff * ddiff, y)))
    logger.debug(f"h1_gap(tau={tau}, grid_n={grid_n}) = {gap:.6e}")
    return gap
