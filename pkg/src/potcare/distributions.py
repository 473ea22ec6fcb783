"""Continuous and discrete generalized Pareto tail primitives.

The continuous family has distribution function
``H(y) = 1 - (1 + xi * y / sigma) ** (-1 / xi)`` on ``y >= 0``, reducing to
the exponential ``1 - exp(-y / sigma)`` at ``xi = 0``, with finite upper
endpoint ``-sigma / xi`` when ``xi < 0``. The discrete family lives on the
nonnegative integers and is obtained by unit differencing of the continuous
CDF, ``P(K = k) = H(k + 1) - H(k)``, which is exactly normalized by
telescoping.

All functions broadcast numpy-style over the observation and parameter
arguments; scalar inputs return Python floats. Shape values within
``XI_EPS`` of zero are routed through exponential-limit series expansions
to avoid catastrophic cancellation in the ``1 / xi`` exponents.
"""

from __future__ import annotations

import math
from dataclasses import InitVar, dataclass

import numpy as np

__all__ = [
    "XI_EPS",
    "DEFAULT_XI_BOUNDS",
    "SupportError",
    "GpdParams",
    "LogDensityGradient",
    "gpd_upper_endpoint",
    "gpd_in_support",
    "gpd_cdf",
    "gpd_survival",
    "gpd_logpdf",
    "gpd_quantile",
    "gpd_sample",
    "gpd_log_density_gradient",
    "dgpd_in_support",
    "dgpd_pmf",
    "dgpd_logpmf",
    "dgpd_cdf",
    "dgpd_quantile",
    "dgpd_sample",
    "dgpd_log_mass_gradient",
]

# Below this |xi| the exponential-limit series branches are used.
XI_EPS = 1e-6

# Default open estimation bounds for the shape: xi > -0.5 for estimator
# regularity, xi < 1 so count tails keep a finite mean.
DEFAULT_XI_BOUNDS = (-0.5, 1.0)

_LOG2 = math.log(2.0)


class SupportError(ValueError):
    """Raised when an observation lies outside the distribution support."""


@dataclass(frozen=True)
class GpdParams:
    """Validated scale/shape pair for one tail distribution.

    Parameters
    ----------
    sigma : float
        Scale, in the units of the exceedance. Must be positive and finite.
    xi : float
        Shape (dimensionless). Must lie strictly inside `bounds`.
    bounds : tuple of float, optional
        Open estimation bounds for the shape. Defaults to
        ``DEFAULT_XI_BOUNDS``.
    """

    sigma: float
    xi: float
    bounds: InitVar[tuple[float, float]] = DEFAULT_XI_BOUNDS

    def __post_init__(self, bounds):
        lo, hi = bounds
        if not (math.isfinite(self.sigma) and self.sigma > 0.0):
            raise ValueError(f"sigma must be positive and finite, got {self.sigma!r}")
        if not (lo < self.xi < hi):
            raise ValueError(f"xi={self.xi!r} is outside the open interval ({lo}, {hi})")


@dataclass(frozen=True)
class LogDensityGradient:
    """Partial derivatives of a log density/mass w.r.t. (sigma, xi)."""

    d_sigma: float | np.ndarray
    d_xi: float | np.ndarray


def _prepare(*args):
    """Broadcast arguments to float arrays; report whether all were scalar."""
    scalar = all(np.ndim(a) == 0 for a in args)
    arrays = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in args))
    return arrays, scalar


def _maybe_scalar(value, scalar):
    return float(value) if scalar else value


def _check_sigma(sigma):
    if np.any(~np.isfinite(sigma)) or np.any(sigma <= 0.0):
        raise ValueError("sigma must be positive and finite")


def _check_finite_obs(y, name):
    if np.any(~np.isfinite(y)):
        raise ValueError(f"{name} must be finite")


def gpd_upper_endpoint(sigma, xi):
    """Upper support endpoint: ``-sigma / xi`` for ``xi < 0``, else ``inf``."""
    (sigma, xi), scalar = _prepare(sigma, xi)
    _check_sigma(sigma)
    with np.errstate(divide="ignore"):
        endpoint = np.where(xi < 0.0, -sigma / np.where(xi < 0.0, xi, -1.0), np.inf)
    return _maybe_scalar(endpoint, scalar)


def gpd_in_support(y, sigma, xi):
    """True where ``y`` lies inside the support ``[0, upper endpoint)``."""
    (y, sigma, xi), scalar = _prepare(y, sigma, xi)
    inside = (y >= 0.0) & (1.0 + xi * y / sigma > 0.0)
    return bool(inside) if scalar else inside


def _log_survival(z, xi):
    """``log S`` at standardized exceedance ``z = y / sigma``.

    ``S(z) = (1 + xi z)^(-1/xi)``; ``-inf`` at or beyond the upper endpoint.
    """
    small = np.abs(xi) < XI_EPS
    t = 1.0 + xi * z
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        if np.any(small):
            xi_safe = np.where(small, 1.0, xi)
            general = -np.log1p(np.where(t > 0.0, xi * z, 0.0)) / xi_safe
            series = -z + xi * z * z / 2.0 - xi * xi * z**3 / 3.0
            out = np.where(small, series, general)
        else:
            out = -np.log1p(np.where(t > 0.0, xi * z, 0.0)) / xi
    return np.where(t > 0.0, out, -np.inf)


def _log_survival_gradient(z, sigma, xi):
    """(d/dsigma, d/dxi) of ``log S(z)`` for points with ``1 + xi z > 0``."""
    t = 1.0 + xi * z
    d_sigma = z / (sigma * t)
    small = np.abs(xi) < XI_EPS
    xi_safe = np.where(small, 1.0, xi)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        general = np.log1p(xi * z) / xi_safe**2 - z / (xi_safe * t)
        series = z * z / 2.0 - 2.0 * xi * z**3 / 3.0
    return d_sigma, np.where(small, series, general)


def gpd_cdf(y, sigma, xi):
    """Continuous GPD distribution function at ``y >= 0``.

    Returns 1.0 for points at or beyond a finite upper endpoint.
    """
    (y, sigma, xi), scalar = _prepare(y, sigma, xi)
    _check_sigma(sigma)
    _check_finite_obs(y, "y")
    if np.any(y < 0.0):
        raise ValueError("y must be nonnegative")
    out = -np.expm1(_log_survival(y / sigma, xi))
    return _maybe_scalar(out, scalar)


def gpd_survival(y, sigma, xi):
    """``1 - gpd_cdf`` computed without cancellation in the far tail."""
    (y, sigma, xi), scalar = _prepare(y, sigma, xi)
    _check_sigma(sigma)
    _check_finite_obs(y, "y")
    if np.any(y < 0.0):
        raise ValueError("y must be nonnegative")
    out = np.exp(_log_survival(y / sigma, xi))
    return _maybe_scalar(out, scalar)


def gpd_logpdf(y, sigma, xi):
    """Log density ``-log sigma - (1/xi + 1) log(1 + xi y / sigma)``.

    Raises
    ------
    SupportError
        If any observation lies outside the support; the caller decides
        whether that means bad data or zero likelihood.
    """
    (y, sigma, xi), scalar = _prepare(y, sigma, xi)
    _check_sigma(sigma)
    _check_finite_obs(y, "y")
    inside = (y >= 0.0) & (1.0 + xi * y / sigma > 0.0)
    if not np.all(inside):
        raise SupportError("observation outside the GPD support")
    z = y / sigma
    small = np.abs(xi) < XI_EPS
    xi_safe = np.where(small, 1.0, xi)
    with np.errstate(over="ignore", invalid="ignore"):
        general = -(1.0 + 1.0 / xi_safe) * np.log1p(xi * z)
        series = -z - xi * (z - z * z / 2.0) - xi * xi * (z**3 / 3.0 - z * z / 2.0)
    out = -np.log(sigma) + np.where(small, series, general)
    return _maybe_scalar(out, scalar)


def gpd_quantile(prob, sigma, xi):
    """Inverse CDF ``(sigma/xi) ((1 - prob)^(-xi) - 1)`` on ``prob in [0, 1)``.

    ``prob = 1`` is rejected for ``xi >= 0`` (infinite quantile) and returns
    the finite endpoint for ``xi < 0``.
    """
    (prob, sigma, xi), scalar = _prepare(prob, sigma, xi)
    _check_sigma(sigma)
    if np.any(~np.isfinite(prob)) or np.any(prob < 0.0) or np.any(prob > 1.0):
        raise ValueError("prob must lie in [0, 1]")
    if np.any((prob == 1.0) & (xi >= 0.0)):
        raise ValueError("quantile at prob=1 is infinite for xi >= 0")
    with np.errstate(divide="ignore", invalid="ignore"):
        w = -np.log1p(-prob)
        small = np.abs(xi) < XI_EPS
        xi_safe = np.where(small, 1.0, xi)
        general = sigma / xi_safe * np.expm1(xi * w)
        series = sigma * w * (1.0 + xi * w / 2.0 + xi * xi * w * w / 6.0)
        out = np.where(small, series, general)
        # prob exactly 1 with xi < 0: the expm1 route hits the endpoint.
        out = np.where(prob == 1.0, -sigma / xi_safe, out)
    return _maybe_scalar(out, scalar)


def gpd_sample(rng, sigma, xi, n):
    """Inverse-CDF sampling; deterministic given the generator state."""
    if n < 0:
        raise ValueError("n must be nonnegative")
    u = rng.random(n)
    return np.asarray(gpd_quantile(u, sigma, xi), dtype=float).reshape(n)


def gpd_log_density_gradient(y, sigma, xi):
    """Analytic (d/dsigma, d/dxi) of the continuous log density.

    Matches central finite differences of `gpd_logpdf` at interior points;
    shapes within ``XI_EPS`` of zero use the series limit.
    """
    (y, sigma, xi), scalar = _prepare(y, sigma, xi)
    _check_sigma(sigma)
    inside = (y >= 0.0) & (1.0 + xi * y / sigma > 0.0)
    if not np.all(inside):
        raise SupportError("observation outside the GPD support")
    z = y / sigma
    t = 1.0 + xi * z
    d_sigma = (-1.0 + (1.0 + xi) * z / t) / sigma
    small = np.abs(xi) < XI_EPS
    xi_safe = np.where(small, 1.0, xi)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        general = np.log1p(xi * z) / xi_safe**2 - (1.0 + 1.0 / xi_safe) * z / t
        series = z * z / 2.0 - z + xi * (z * z - 2.0 * z**3 / 3.0)
    d_xi = np.where(small, series, general)
    return LogDensityGradient(_maybe_scalar(d_sigma, scalar), _maybe_scalar(d_xi, scalar))


def _check_counts(k, name="k", allow_negative=False):
    arr = np.asarray(k)
    if arr.dtype.kind not in "iu":
        values = np.asarray(k, dtype=float)
        if np.any(~np.isfinite(values)) or np.any(values != np.floor(values)):
            raise ValueError(f"{name} must be integer-valued")
    if not allow_negative and np.any(np.asarray(k, dtype=float) < 0):
        raise ValueError(f"{name} must be nonnegative")


def dgpd_in_support(k, sigma, xi):
    """True where the integer ``k`` carries positive discrete mass."""
    _check_counts(k)
    (k, sigma, xi), scalar = _prepare(k, sigma, xi)
    inside = (k >= 0.0) & (1.0 + xi * k / sigma > 0.0)
    return bool(inside) if scalar else inside


def dgpd_pmf(k, sigma, xi):
    """Discrete GPD mass ``H(k + 1) - H(k)`` at integer ``k >= 0``.

    Zero beyond a finite upper endpoint (negative shape).
    """
    _check_counts(k)
    (k, sigma, xi), scalar = _prepare(k, sigma, xi)
    _check_sigma(sigma)
    ls0 = _log_survival(k / sigma, xi)
    ls1 = _log_survival((k + 1.0) / sigma, xi)
    with np.errstate(invalid="ignore"):
        out = np.where(np.isfinite(ls0), np.exp(ls0) * -np.expm1(ls1 - ls0), 0.0)
    return _maybe_scalar(out, scalar)


def dgpd_logpmf(k, sigma, xi):
    """Log of `dgpd_pmf`; ``-inf`` outside the support (zero mass)."""
    _check_counts(k)
    (k, sigma, xi), scalar = _prepare(k, sigma, xi)
    _check_sigma(sigma)
    ls0 = _log_survival(k / sigma, xi)
    ls1 = _log_survival((k + 1.0) / sigma, xi)
    with np.errstate(invalid="ignore", divide="ignore"):
        delta = ls1 - ls0
        # log(1 - exp(delta)) with the usual split for accuracy
        log1m = np.where(
            delta < -_LOG2,
            np.log1p(-np.exp(delta)),
            np.log(np.maximum(-np.expm1(delta), 0.0)),
        )
        out = np.where(np.isfinite(ls0), ls0 + np.where(np.isneginf(delta), 0.0, log1m), -np.inf)
    return _maybe_scalar(out, scalar)


def dgpd_cdf(k, sigma, xi):
    """Discrete GPD distribution function ``H(k + 1)`` at integer ``k``.

    Accepts ``k < 0`` (returns 0.0) so callers can difference at the lower
    boundary without special-casing.
    """
    _check_counts(k, allow_negative=True)
    (k, sigma, xi), scalar = _prepare(k, sigma, xi)
    _check_sigma(sigma)
    out = np.where(k < 0.0, 0.0, -np.expm1(_log_survival((k + 1.0) / sigma, xi)))
    return _maybe_scalar(out, scalar)


def dgpd_quantile(prob, sigma, xi):
    """Smallest integer ``k`` with ``dgpd_cdf(k) >= prob``, ``prob in [0, 1)``."""
    if np.ndim(prob) > 0:
        return np.array([dgpd_quantile(p, sigma, xi) for p in np.asarray(prob).ravel()],
                        dtype=np.int64).reshape(np.shape(prob))
    prob = float(prob)
    if not 0.0 <= prob < 1.0:
        raise ValueError("prob must lie in [0, 1)")
    if prob == 0.0:
        return 0
    # Seed from the continuous quantile, then pin down minimality exactly.
    k = max(0, math.ceil(gpd_quantile(prob, sigma, xi)) - 1)
    while k > 0 and dgpd_cdf(k - 1, sigma, xi) >= prob:
        k -= 1
    while dgpd_cdf(k, sigma, xi) < prob:
        k += 1
    return k


def dgpd_sample(rng, sigma, xi, n):
    """Integer part of a continuous GPD draw, which has exactly the DGPD law."""
    return np.floor(gpd_sample(rng, sigma, xi, n)).astype(np.int64)


def dgpd_log_mass_gradient(k, sigma, xi):
    """Analytic (d/dsigma, d/dxi) of ``log dgpd_pmf`` at an interior ``k``.

    Built by differencing the survival function and its parameter
    derivatives; stable against ``S(k+1)/S(k) -> 1`` via the
    ``A(k) + (A(k) - A(k+1)) r / (1 - r)`` form.
    """
    _check_counts(k)
    (k, sigma, xi), scalar = _prepare(k, sigma, xi)
    _check_sigma(sigma)
    z0 = k / sigma
    z1 = (k + 1.0) / sigma
    inside0 = 1.0 + xi * z0 > 0.0
    if not np.all(inside0):
        raise SupportError("count outside the DGPD support")
    ls0 = _log_survival(z0, xi)
    ls1 = _log_survival(z1, xi)
    a0_sigma, a0_xi = _log_survival_gradient(z0, sigma, xi)
    inside1 = 1.0 + xi * z1 > 0.0
    z1_safe = np.where(inside1, z1, 0.0)
    a1_sigma, a1_xi = _log_survival_gradient(z1_safe, sigma, xi)
    a1_sigma = np.where(inside1, a1_sigma, 0.0)
    a1_xi = np.where(inside1, a1_xi, 0.0)
    with np.errstate(invalid="ignore", divide="ignore"):
        delta = ls1 - ls0
        ratio = np.where(inside1, np.exp(delta) / -np.expm1(delta), 0.0)
    d_sigma = a0_sigma + (a0_sigma - a1_sigma) * ratio
    d_xi = a0_xi + (a0_xi - a1_xi) * ratio
    return LogDensityGradient(_maybe_scalar(d_sigma, scalar), _maybe_scalar(d_xi, scalar))
