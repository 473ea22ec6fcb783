"""Charge-at-Risk: tail quantiles and capacity-exceedance probabilities.

The congestion measure composes two fitted pieces at a covariate scenario
``x``: the probability ``zeta(x)`` that a day exceeds the threshold, and
the fitted tail distribution of the excess. The level-``alpha`` charge is
``u`` itself when ``alpha <= 1 - zeta`` (the answer lies below the
threshold and is reported censored), else the tail quantile at the
rescaled level ``(alpha - (1 - zeta)) / zeta``, shifted back to the
original response scale. The inverse view asks for the probability that
the daily charge exceeds a capacity ``L >= u``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .design import design_rows, predict_params
from .distributions import dgpd_cdf, dgpd_quantile, gpd_cdf, gpd_quantile
from .pot import response_series

__all__ = [
    "ExceedanceRateFit",
    "CareEstimate",
    "CongestionEstimate",
    "fit_exceedance_rate",
    "rate_at",
    "care",
    "care_curve",
    "congestion_probability",
]

_SEPARATION_BOUND = 30.0


@dataclass(frozen=True)
class ExceedanceRateFit:
    """Binary-response model for P(response > u | covariates).

    Logistic inverse link, fitted by iteratively reweighted least squares
    on standardized covariates; an intercept-only fit reproduces the
    empirical exceedance rate exactly (the `constant` rate model).
    """

    threshold: float
    response_kind: str
    coef: np.ndarray
    covariate_names: tuple[str, ...]
    centers: np.ndarray
    scales: np.ndarray
    minima: np.ndarray
    maxima: np.ndarray
    converged: bool
    separation_flag: bool
    n_exceedances: int
    n_days: int

    def linear_predictor(self, scenario):
        x = np.ones(self.coef.size)
        for j, name in enumerate(self.covariate_names):
            if name not in scenario:
                raise KeyError(f"missing scenario covariate {name!r}")
            x[1 + j] = (float(scenario[name]) - self.centers[j]) / self.scales[j]
        return float(x @ self.coef)

    def extrapolates(self, scenario):
        for j, name in enumerate(self.covariate_names):
            v = float(scenario[name])
            if v < self.minima[j] or v > self.maxima[j]:
                return True
        return False


def _irls_logistic(x, y, grad_tol=1e-8, max_iter=100):
    beta = np.zeros(x.shape[1])
    converged = False
    separated = False
    for _ in range(max_iter):
        eta = x @ beta
        p = expit(eta)
        g = x.T @ (y - p)
        if np.linalg.norm(g) <= grad_tol:
            converged = True
            break
        w = np.maximum(p * (1.0 - p), 1e-12)
        h = x.T @ (x * w[:, None])
        try:
            beta = beta + np.linalg.solve(h, g)
        except np.linalg.LinAlgError:
            beta = beta + np.linalg.lstsq(h, g, rcond=None)[0]
        if np.max(np.abs(beta)) > _SEPARATION_BOUND:
            separated = True
            break
    # standardized designs can saturate below the coefficient guard: a
    # perfectly classified sample with pinned probabilities is separation
    if not separated and x.shape[1] > 1:
        p = expit(x @ beta)
        ones, zeros = y == 1.0, y == 0.0
        if (np.all((p > 0.5) == ones)
                and (not ones.any() or np.min(p[ones]) > 1.0 - 1e-7)
                and (not zeros.any() or np.max(p[zeros]) < 1e-7)):
            separated = True
    return beta, converged, separated


def fit_exceedance_rate(series, u, covariate_names=(), response_kind="count",
                        count_column="positives", odds_correction=0.5,
                        rate_model="logistic"):
    """Fit P(response > u | covariates) on all days of the series.

    ``rate_model="constant"`` drops the covariates (intercept only). Days
    with a missing response or missing covariates are excluded. Perfect
    separation is detected by a coefficient-magnitude guard and flagged,
    never raised.
    """
    if rate_model not in ("logistic", "constant"):
        raise ValueError("rate_model must be 'logistic' or 'constant'")
    names = tuple(covariate_names) if rate_model == "logistic" else ()
    response = response_series(series, response_kind, count_column, odds_correction)
    keep = ~np.isnan(response)
    cols = []
    for name in names:
        if name not in series.covariates:
            raise KeyError(f"covariate {name!r} not present in the series")
        keep &= ~np.isnan(series.covariates[name])
    y = (response[keep] > u).astype(float)
    n = y.size
    if n == 0 or y.sum() == 0 or y.sum() == n:
        raise ValueError("need both exceedance and non-exceedance days to fit the rate model")
    centers, scales, minima, maxima = [], [], [], []
    for name in names:
        col = series.covariates[name][keep]
        sd = float(np.std(col))
        if sd == 0.0:
            raise ValueError(f"covariate {name!r} is constant")
        centers.append(float(np.mean(col)))
        scales.append(sd)
        minima.append(float(np.min(col)))
        maxima.append(float(np.max(col)))
        cols.append((col - centers[-1]) / sd)
    x = np.column_stack([np.ones(n)] + cols)
    beta, converged, separated = _irls_logistic(x, y)
    return ExceedanceRateFit(
        threshold=float(u),
        response_kind=response_kind,
        coef=beta,
        covariate_names=names,
        centers=np.array(centers),
        scales=np.array(scales),
        minima=np.array(minima),
        maxima=np.array(maxima),
        converged=converged,
        separation_flag=separated,
        n_exceedances=int(y.sum()),
        n_days=n,
    )


def rate_at(rate_fit, scenario):
    """Exceedance probability ``zeta(x)`` at a covariate scenario."""
    return float(expit(rate_fit.linear_predictor(scenario)))


@dataclass(frozen=True)
class CareEstimate:
    """Level-``alpha`` Charge-at-Risk at one scenario."""

    alpha: float
    threshold: float
    zeta: float
    tail_quantile: float
    value: float
    censored_below_threshold: bool
    extrapolation: bool = False


@dataclass(frozen=True)
class CongestionEstimate:
    """P(daily charge > capacity) at one scenario.

    Below the threshold the tail model cannot resolve the probability;
    ``zeta`` is then reported as a lower bound.
    """

    capacity: float
    probability: float
    zeta: float
    lower_bound_only: bool
    extrapolation: bool = False


def _scenario_params(tail_fit, scenario):
    data = {name: np.array([float(scenario[name])])
            for name in tail_fit.standardization.transforms}
    x_sigma, x_xi, extrap = design_rows(tail_fit.standardization, data)
    params = predict_params(tail_fit.beta_sigma, tail_fit.beta_xi,
                            x_sigma[0], x_xi[0], tail_fit.spec_echo.xi_bounds)
    return params, bool(extrap[0])


def care(tail_fit, rate_fit, scenario, alpha):
    """Level-``alpha`` quantile of the daily charge under a scenario.

    Discrete tails use the smallest integer whose CDF reaches the level,
    so count-valued CaRe over-covers rather than under-covers. Scenarios
    outside the fitted covariate range are flagged, not rejected.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    family = tail_fit.spec_echo.family
    expected_kind = "count" if family == "dgpd" else "odds"
    if rate_fit.response_kind != expected_kind:
        raise ValueError(
            f"rate model was fit on {rate_fit.response_kind!r} but the tail family "
            f"{family!r} implies {expected_kind!r}")
    zeta = rate_at(rate_fit, scenario)
    u = rate_fit.threshold
    params, extrap = _scenario_params(tail_fit, scenario)
    extrap = extrap or rate_fit.extrapolates(scenario)
    if alpha <= 1.0 - zeta:
        return CareEstimate(alpha, u, zeta, math.nan, u, True, extrap)
    p_tail = (alpha - (1.0 - zeta)) / zeta
    if family == "dgpd":
        k = dgpd_quantile(p_tail, params.sigma, params.xi)
        return CareEstimate(alpha, u, zeta, float(k), u + 1.0 + k, False, extrap)
    q = gpd_quantile(p_tail, params.sigma, params.xi)
    return CareEstimate(alpha, u, zeta, float(q), u + q, False, extrap)


def care_curve(tail_fit, rate_fit, scenario, alpha_grid):
    """CaRe across an ascending grid of levels; values are nondecreasing."""
    alphas = list(alpha_grid)
    if sorted(alphas) != alphas:
        raise ValueError("alpha_grid must be sorted ascending")
    return [care(tail_fit, rate_fit, scenario, a) for a in alphas]


def congestion_probability(tail_fit, rate_fit, scenario, capacity):
    """P(daily charge > capacity | scenario), in ``[0, zeta]``.

    For ``capacity < u`` the tail model is silent: the result carries
    ``zeta`` as a lower bound with `lower_bound_only` set.
    """
    zeta = rate_at(rate_fit, scenario)
    u = rate_fit.threshold
    params, extrap = _scenario_params(tail_fit, scenario)
    extrap = extrap or rate_fit.extrapolates(scenario)
    if capacity < u:
        return CongestionEstimate(capacity, zeta, zeta, True, extrap)
    family = tail_fit.spec_echo.family
    if family == "dgpd":
        shifted = math.floor(capacity) - int(u) - 1
        tail = 1.0 - dgpd_cdf(shifted, params.sigma, params.xi)
    else:
        tail = 1.0 - gpd_cdf(capacity - u, params.sigma, params.xi)
    return CongestionEstimate(capacity, zeta * tail, zeta, False, extrap)
