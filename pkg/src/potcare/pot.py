"""Peaks-over-threshold mechanics for daily hospital series.

Two response series are supported: daily case counts (one of the count
columns) and the odds of positive cases. Exceedances over a threshold
``u`` become the fitting data: counts are shifted to ``w = y - u - 1`` so
the discrete tail starts at zero with no structural gap, odds keep their
raw excess ``z = y - u > 0``. Extraction records provenance indices into
the daily series so every reported value can be mapped back exactly.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .design import ModelSpec, build_design, link_xi
from .robust import RobustConfig, fit

__all__ = [
    "EmptyExceedanceError",
    "DailySeries",
    "ExceedanceSet",
    "StabilityRow",
    "MeanExcessRow",
    "odds_series",
    "response_series",
    "choose_threshold_by_quantile",
    "extract_exceedances",
    "threshold_stability",
    "mean_residual_life",
]

COUNT_COLUMNS = ("positives", "negatives", "visits")


class EmptyExceedanceError(ValueError):
    """No observations exceed the threshold; fitting must not proceed."""


@dataclass(frozen=True)
class DailySeries:
    """One row per day: visit/case counts plus meteorological covariates.

    Dates must be strictly increasing; counts nonnegative integers;
    covariates finite or NaN (explicitly missing). ``positives +
    negatives <= visits`` is deliberately not enforced: tests may cover a
    subset or superset of visits.
    """

    dates: tuple[str, ...]
    visits: np.ndarray
    positives: np.ndarray
    negatives: np.ndarray
    covariates: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.dates)
        for name in COUNT_COLUMNS:
            col = getattr(self, name)
            if len(col) != n:
                raise ValueError(f"{name} length {len(col)} != {n} dates")
            if col.dtype.kind not in "iu" or np.any(col < 0):
                raise ValueError(f"{name} must be nonnegative integers")
        if any(b <= a for a, b in zip(self.dates, self.dates[1:])):
            raise ValueError("dates must be strictly increasing")
        for name, col in self.covariates.items():
            if len(col) != n:
                raise ValueError(f"covariate {name!r} length mismatch")
            if np.any(np.isinf(col)):
                raise ValueError(f"covariate {name!r} contains infinities")

    def __len__(self):
        return len(self.dates)


@dataclass(frozen=True)
class ExceedanceSet:
    """Threshold exceedances with aligned covariates and provenance.

    For counts the stored value is the shifted integer ``w = y - u - 1``;
    for odds it is the positive excess ``z = y - u``.
    """

    response_kind: str
    threshold: float
    values: np.ndarray
    source_indices: np.ndarray
    covariate_rows: dict[str, np.ndarray]
    n_missing_response: int = 0
    n_missing_covariates: int = 0

    def __post_init__(self):
        if self.response_kind not in ("count", "odds"):
            raise ValueError("response_kind must be 'count' or 'odds'")
        if len(self.values) != len(self.source_indices):
            raise ValueError("values/source_indices length mismatch")
        for name, col in self.covariate_rows.items():
            if len(col) != len(self.values):
                raise ValueError(f"covariate {name!r} row count mismatch")
        if self.response_kind == "count":
            if np.any(self.values < 0) or np.any(self.values != np.floor(self.values)):
                raise ValueError("count exceedances must be nonnegative integers")
        elif np.any(self.values <= 0.0):
            raise ValueError("odds exceedances must be strictly positive")

    def __len__(self):
        return len(self.values)

    @property
    def family(self):
        return "dgpd" if self.response_kind == "count" else "gpd"

    def original_scale(self, tail_values):
        """Undo the extraction shift: tail value -> original response."""
        tail_values = np.asarray(tail_values)
        if self.response_kind == "count":
            return self.threshold + 1 + tail_values
        return self.threshold + tail_values


def odds_series(series, correction=0.5):
    """Per-day odds ``(positives + correction) / (negatives + correction)``.

    With ``correction = 0``, days with zero negatives are marked missing
    (NaN) rather than infinite.
    """
    if correction < 0.0:
        raise ValueError("correction must be nonnegative")
    pos = series.positives.astype(float)
    neg = series.negatives.astype(float)
    with np.errstate(divide="ignore", invalid="ignore"):
        odds = (pos + correction) / (neg + correction)
    return np.where(neg + correction > 0.0, odds, np.nan)


def response_series(series, response_kind, count_column="positives", odds_correction=0.5):
    """The modeled daily response: a count column or the odds series."""
    if response_kind == "count":
        if count_column not in COUNT_COLUMNS:
            raise ValueError(f"count_column must be one of {COUNT_COLUMNS}")
        return getattr(series, count_column).astype(float)
    if response_kind == "odds":
        return odds_series(series, odds_correction)
    raise ValueError("response_kind must be 'count' or 'odds'")


def choose_threshold_by_quantile(values, q, response_kind="odds"):
    """Lower nearest-rank empirical quantile of the non-missing values.

    For count responses the threshold is floored to an integer.
    """
    if not 0.0 < q < 1.0:
        raise ValueError("q must lie strictly between 0 and 1")
    values = np.asarray(values, dtype=float)
    values = values[~np.isnan(values)]
    if values.size == 0:
        raise ValueError("cannot choose a threshold from an empty series")
    ordered = np.sort(values)
    rank = max(math.ceil(q * ordered.size), 1)
    u = float(ordered[rank - 1])
    return float(math.floor(u)) if response_kind == "count" else u


def extract_exceedances(series, response_kind, u, covariate_names=(),
                        count_column="positives", odds_correction=0.5):
    """Collect strict exceedances over ``u`` with aligned covariate rows.

    Rows with a missing response or any missing covariate are excluded and
    counted. Raises `EmptyExceedanceError` when nothing exceeds ``u``.
    """
    if not math.isfinite(u):
        raise ValueError("threshold must be finite")
    response = response_series(series, response_kind, count_column, odds_correction)
    missing_response = np.isnan(response)
    with np.errstate(invalid="ignore"):
        exceeds = ~missing_response & (response > u)
    missing_cov = np.zeros(len(series), dtype=bool)
    for name in covariate_names:
        if name not in series.covariates:
            raise KeyError(f"covariate {name!r} not present in the series")
        missing_cov |= np.isnan(series.covariates[name])
    keep = exceeds & ~missing_cov
    n_missing_cov = int(np.sum(exceeds & missing_cov))
    idx = np.flatnonzero(keep)
    if idx.size == 0:
        raise EmptyExceedanceError(
            f"empty exceedance set: no rows exceed threshold {u:g}")
    if response_kind == "count":
        values = (response[idx] - u - 1.0).astype(np.int64)
    else:
        values = response[idx] - u
    rows = {name: series.covariates[name][idx].copy() for name in covariate_names}
    return ExceedanceSet(
        response_kind=response_kind,
        threshold=float(u),
        values=values,
        source_indices=idx,
        covariate_rows=rows,
        n_missing_response=int(np.sum(missing_response)),
        n_missing_covariates=n_missing_cov,
    )


@dataclass(frozen=True)
class StabilityRow:
    quantile: float
    threshold: float
    n_exceedances: int
    sigma_modified: float
    xi: float
    converged: bool
    error: str = ""


@dataclass(frozen=True)
class MeanExcessRow:
    threshold: float
    mean_excess: float
    standard_error: float
    count: int
    flagged: bool


def threshold_stability(series, response_kind, q_grid, count_column="positives",
                        odds_correction=0.5, max_iter=200):
    """Parameter-stability diagnostic over a grid of candidate thresholds.

    Per threshold, an intercept-only maximum-likelihood fit; the scale is
    reported reparameterized as ``sigma - xi * u`` so both columns should
    be flat above any valid threshold. Per-threshold failures are captured
    in the row, never raised.
    """
    q_grid = list(q_grid)
    if sorted(q_grid) != q_grid:
        raise ValueError("q_grid must be sorted ascending")
    response = response_series(series, response_kind, count_column, odds_correction)
    rows = []
    cfg = RobustConfig(c=math.inf, max_iter=max_iter, n_restarts=0)
    for q in q_grid:
        u = choose_threshold_by_quantile(response, q, response_kind)
        try:
            exc = extract_exceedances(series, response_kind, u,
                                      count_column=count_column,
                                      odds_correction=odds_correction)
            spec = ModelSpec(family=exc.family)
            dm = build_design({"_idx": np.arange(float(len(exc)))}, spec)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                res = fit(exc, dm, cfg, spec)
            sigma = math.exp(res.beta_sigma[0])
            xi = float(link_xi(res.beta_xi[0], spec.xi_bounds))
            rows.append(StabilityRow(q, u, len(exc), sigma - xi * u, xi,
                                     bool(res.converged)))
        except (EmptyExceedanceError, ValueError) as err:
            rows.append(StabilityRow(q, u, 0, math.nan, math.nan, False, str(err)))
    return rows


def mean_residual_life(values, u_grid):
    """Mean excess over each threshold with its standard error.

    Rows with fewer than two exceedances are flagged rather than dropped.
    """
    values = np.asarray(values, dtype=float)
    values = values[~np.isnan(values)]
    rows = []
    for u in u_grid:
        excess = values[values > u] - u
        count = int(excess.size)
        if count == 0:
            rows.append(MeanExcessRow(float(u), math.nan, math.nan, 0, True))
        elif count == 1:
            rows.append(MeanExcessRow(float(u), float(excess[0]), math.nan, 1, True))
        else:
            rows.append(MeanExcessRow(
                float(u), float(np.mean(excess)),
                float(np.std(excess, ddof=1) / math.sqrt(count)), count, False))
    return rows
