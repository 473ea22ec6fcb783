"""Model specification grammar, design matrices, links, and spline bases.

A model spec lists, per distribution parameter, the additive terms of the
linear predictor: an intercept, linear covariate effects, and penalized
cubic B-spline smooths. Covariates are standardized (centered and scaled)
before any basis construction; the transforms are stored alongside the
design so that prediction on new data reproduces the training columns
byte for byte.

Column ordering is fixed: intercept first, linear terms in spec order,
spline blocks last. Each spline block is a cubic B-spline basis on equally
spaced knots with a second-order difference penalty; a sum-to-zero
constraint is absorbed through a Householder null-space transform so the
block stays identifiable next to the intercept.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from scipy.special import expit, logit

from .distributions import DEFAULT_XI_BOUNDS, GpdParams

__all__ = [
    "DesignError",
    "Intercept",
    "Linear",
    "Spline",
    "ModelSpec",
    "CovariateStats",
    "TermColumns",
    "ParamLayout",
    "DesignInfo",
    "DesignMatrices",
    "parse_term",
    "term_to_config",
    "bspline_basis",
    "build_design",
    "design_rows",
    "link_sigma",
    "link_sigma_inv",
    "link_sigma_deriv",
    "link_xi",
    "link_xi_inv",
    "link_xi_deriv",
    "predict_params",
    "predict_params_arrays",
    "raw_scale_coefficients",
]

SPLINE_DEGREE = 3


class DesignError(ValueError):
    """Invalid model specification or covariate data."""


@dataclass(frozen=True)
class Intercept:
    pass


@dataclass(frozen=True)
class Linear:
    covariate: str


@dataclass(frozen=True)
class Spline:
    covariate: str
    n_knots: int = 8
    penalty: float = 1.0


Term = Intercept | Linear | Spline


def parse_term(obj):
    """Build a term from its config-file form.

    Accepts ``"intercept"``, a bare covariate name (linear effect), or
    ``{"type": "spline", "covariate": ..., "n_knots": ..., "penalty": ...}``.
    """
    if isinstance(obj, (Intercept, Linear, Spline)):
        return obj
    if isinstance(obj, str):
        return Intercept() if obj == "intercept" else Linear(obj)
    if isinstance(obj, Mapping):
        kind = obj.get("type")
        if kind == "spline":
            return Spline(
                covariate=obj["covariate"],
                n_knots=int(obj.get("n_knots", 8)),
                penalty=float(obj.get("penalty", 1.0)),
            )
        if kind == "linear":
            return Linear(obj["covariate"])
        if kind == "intercept":
            return Intercept()
        raise DesignError(f"unknown term type {kind!r}")
    raise DesignError(f"cannot parse term {obj!r}")


def term_to_config(term):
    if isinstance(term, Intercept):
        return "intercept"
    if isinstance(term, Linear):
        return term.covariate
    return {"type": "spline", "covariate": term.covariate,
            "n_knots": term.n_knots, "penalty": term.penalty}


@dataclass(frozen=True)
class ModelSpec:
    """Response family plus per-parameter term lists and shape bounds."""

    family: str
    sigma_terms: tuple = (Intercept(),)
    xi_terms: tuple = (Intercept(),)
    xi_bounds: tuple[float, float] = DEFAULT_XI_BOUNDS

    def __post_init__(self):
        if self.family not in ("dgpd", "gpd"):
            raise DesignError(f"family must be 'dgpd' or 'gpd', got {self.family!r}")
        lo, hi = self.xi_bounds
        if not (lo < hi and lo >= -0.5):
            raise DesignError(f"xi_bounds must satisfy -0.5 <= lo < hi, got {self.xi_bounds}")
        for name, terms in (("sigma_terms", self.sigma_terms), ("xi_terms", self.xi_terms)):
            if sum(isinstance(t, Intercept) for t in terms) != 1:
                raise DesignError(f"{name} must contain exactly one intercept")
            for t in terms:
                if isinstance(t, Spline):
                    if t.n_knots < SPLINE_DEGREE + 2:
                        raise DesignError(
                            f"spline on {t.covariate!r} needs at least {SPLINE_DEGREE + 2} knots")
                    if t.penalty < 0.0:
                        raise DesignError("spline penalty must be nonnegative")

    def covariate_names(self):
        """All covariates referenced by either parameter, in first-use order."""
        names = []
        for t in self.sigma_terms + self.xi_terms:
            cov = getattr(t, "covariate", None)
            if cov is not None and cov not in names:
                names.append(cov)
        return tuple(names)

    def to_config(self):
        return {
            "family": self.family,
            "sigma_terms": [term_to_config(t) for t in self.sigma_terms],
            "xi_terms": [term_to_config(t) for t in self.xi_terms],
            "xi_bounds": list(self.xi_bounds),
        }

    @classmethod
    def from_config(cls, obj):
        return cls(
            family=obj["family"],
            sigma_terms=tuple(parse_term(t) for t in obj.get("sigma_terms", ["intercept"])),
            xi_terms=tuple(parse_term(t) for t in obj.get("xi_terms", ["intercept"])),
            xi_bounds=tuple(obj.get("xi_bounds", DEFAULT_XI_BOUNDS)),
        )


# ---------------------------------------------------------------------------
# B-spline basis


def _extend_knots(knots, degree):
    # uniform extension by edge spacing keeps partition of unity on the range
    left = knots[0] + (knots[0] - knots[1]) * np.arange(degree, 0, -1)
    right = knots[-1] + (knots[-1] - knots[-2]) * np.arange(1, degree + 1)
    return np.concatenate([left, knots, right])


def bspline_basis(x, knots, degree=SPLINE_DEGREE):
    """Evaluate the B-spline basis at ``x`` by the Cox-de Boor recursion.

    Parameters
    ----------
    x : float or array
        Evaluation points; values outside ``[knots[0], knots[-1]]`` are
        clamped to the range.
    knots : array
        Strictly increasing knot sequence spanning the covariate range; it
        is extended internally by ``degree`` knots on each side using the
        edge spacing. At least ``degree + 2`` knots are required.
    degree : int
        Spline degree (cubic by default).

    Returns
    -------
    array of shape ``(..., len(knots) + degree - 1)``
        Basis values; nonnegative and summing to one inside the range.
    """
    knots = np.asarray(knots, dtype=float)
    if knots.ndim != 1 or knots.size < degree + 2:
        raise DesignError(f"need at least {degree + 2} strictly increasing knots")
    if np.any(np.diff(knots) <= 0.0):
        raise DesignError("knots must be strictly increasing")
    scalar = np.ndim(x) == 0
    x = np.clip(np.atleast_1d(np.asarray(x, dtype=float)), knots[0], knots[-1])
    t = _extend_knots(knots, degree)
    n_basis = t.size - degree - 1
    # degree-0 indicators on half-open spans, closed at the top span
    spans = (x[:, None] >= t[None, :-1]) & (x[:, None] < t[None, 1:])
    top = x == knots[-1]
    b = spans.astype(float)
    if np.any(top):
        b[top, :] = 0.0
        b[top, np.searchsorted(t, knots[-1], side="left") - 1] = 1.0
    for d in range(1, degree + 1):
        nb = b.shape[1] - 1
        left_den = t[d:d + nb] - t[:nb]
        right_den = t[d + 1:d + 1 + nb] - t[1:nb + 1]
        with np.errstate(divide="ignore", invalid="ignore"):
            left = np.where(left_den > 0.0, (x[:, None] - t[None, :nb]) / left_den, 0.0)
            right = np.where(right_den > 0.0, (t[None, d + 1:d + 1 + nb] - x[:, None]) / right_den, 0.0)
        b = left * b[:, :nb] + right * b[:, 1:nb + 1]
    b = b[:, :n_basis]
    return b[0] if scalar else b


def _second_difference_penalty(n_basis):
    d = np.diff(np.eye(n_basis), n=2, axis=0)
    return d.T @ d


def _sum_to_zero_transform(column_sums):
    """Householder basis of the null space of the row vector ``column_sums``."""
    c = np.asarray(column_sums, dtype=float)
    norm = np.linalg.norm(c)
    if norm == 0.0:
        raise DesignError("degenerate spline block (all-zero column sums)")
    v = c / norm
    v = v.copy()
    v[0] += 1.0 if v[0] >= 0.0 else -1.0
    h = np.eye(c.size) - 2.0 * np.outer(v, v) / (v @ v)
    return h[:, 1:]


# ---------------------------------------------------------------------------
# Layouts and design construction


@dataclass(frozen=True)
class CovariateStats:
    """Standardization transform and observed raw range for one covariate."""

    center: float
    scale: float
    minimum: float
    maximum: float

    def standardize(self, x):
        return (np.asarray(x, dtype=float) - self.center) / self.scale


@dataclass(frozen=True)
class TermColumns:
    term: Term
    start: int
    stop: int
    knots: np.ndarray | None = None
    constraint: np.ndarray | None = None


@dataclass(frozen=True)
class ParamLayout:
    terms: tuple[TermColumns, ...]
    n_columns: int
    column_names: tuple[str, ...]


@dataclass(frozen=True)
class DesignInfo:
    """Everything needed to rebuild design rows for new data."""

    transforms: dict[str, CovariateStats]
    sigma_layout: ParamLayout
    xi_layout: ParamLayout
    xi_bounds: tuple[float, float]


@dataclass(frozen=True)
class DesignMatrices:
    x_sigma: np.ndarray
    x_xi: np.ndarray
    penalty_sigma: np.ndarray
    penalty_xi: np.ndarray
    info: DesignInfo


def _order_terms(terms):
    intercept = [t for t in terms if isinstance(t, Intercept)]
    linear = [t for t in terms if isinstance(t, Linear)]
    splines = [t for t in terms if isinstance(t, Spline)]
    return intercept + linear + splines


def _layout_and_matrix(terms, data, transforms, n_rows, fit_mode, layout=None):
    """Build (layout, X, penalty) for one parameter.

    In fit mode the spline knots and constraint transforms are derived from
    the data and recorded; otherwise the stored `layout` is replayed.
    """
    ordered = _order_terms(terms) if fit_mode else [tc.term for tc in layout.terms]
    blocks, names, term_cols, penalties = [], [], [], []
    start = 0
    for idx, term in enumerate(ordered):
        if isinstance(term, Intercept):
            blocks.append(np.ones((n_rows, 1)))
            names.append("intercept")
            term_cols.append(TermColumns(term, start, start + 1))
            penalties.append(np.zeros((1, 1)))
            start += 1
            continue
        x = transforms[term.covariate].standardize(data[term.covariate])
        if isinstance(term, Linear):
            blocks.append(x.reshape(-1, 1))
            names.append(term.covariate)
            term_cols.append(TermColumns(term, start, start + 1))
            penalties.append(np.zeros((1, 1)))
            start += 1
            continue
        if fit_mode:
            lo, hi = float(np.min(x)), float(np.max(x))
            if hi - lo <= 0.0:
                raise DesignError(f"covariate {term.covariate!r} is constant; cannot place spline knots")
            knots = np.linspace(lo, hi, term.n_knots)
            basis = bspline_basis(x, knots)
            constraint = _sum_to_zero_transform(basis.sum(axis=0))
        else:
            stored = layout.terms[idx]
            knots, constraint = stored.knots, stored.constraint
            basis = bspline_basis(x, knots)
        block = basis @ constraint
        width = block.shape[1]
        blocks.append(block)
        names.extend(f"s({term.covariate}).{j}" for j in range(width))
        term_cols.append(TermColumns(term, start, start + width, knots=knots, constraint=constraint))
        penalties.append(term.penalty * (constraint.T @ _second_difference_penalty(basis.shape[1]) @ constraint))
        start += width
    x_mat = np.hstack(blocks) if blocks else np.zeros((n_rows, 0))
    pen = np.zeros((start, start))
    for tc, p in zip(term_cols, penalties):
        pen[tc.start:tc.stop, tc.start:tc.stop] = p
    new_layout = ParamLayout(tuple(term_cols), start, tuple(names))
    return new_layout, x_mat, pen


def _covariate_stats(data, names):
    transforms = {}
    for name in names:
        if name not in data:
            raise DesignError(f"unknown covariate {name!r}")
        x = np.asarray(data[name], dtype=float)
        bad = np.flatnonzero(~np.isfinite(x))
        if bad.size:
            raise DesignError(f"non-finite value for covariate {name!r} at row {bad[0]}")
        scale = float(np.std(x))
        if scale == 0.0:
            raise DesignError(f"covariate {name!r} is constant")
        transforms[name] = CovariateStats(
            center=float(np.mean(x)), scale=scale,
            minimum=float(np.min(x)), maximum=float(np.max(x)))
    return transforms


def build_design(data, spec, n_rows=None):
    """Construct design matrices and penalty blocks from covariate data.

    Parameters
    ----------
    data : mapping of str to array
        Covariate columns, all the same length (the observation count).
    spec : ModelSpec
    n_rows : int, optional
        Observation count; required only when the spec references no
        covariates (intercept-only) and `data` is empty.

    Returns
    -------
    DesignMatrices
    """
    names = spec.covariate_names()
    missing = [n for n in names if n not in data]
    if missing:
        raise DesignError(f"unknown covariate {missing[0]!r}")
    lengths = {len(np.asarray(data[n])) for n in names} if names else set()
    if len(lengths) > 1:
        raise DesignError("covariate columns have unequal lengths")
    if names:
        inferred = lengths.pop()
        if n_rows is not None and n_rows != inferred:
            raise DesignError(f"n_rows={n_rows} conflicts with covariate length {inferred}")
        n_rows = inferred
    elif n_rows is None:
        n_rows = len(np.asarray(next(iter(data.values())))) if data else 0
        if n_rows == 0:
            raise DesignError("cannot infer the observation count; pass n_rows")
    transforms = _covariate_stats(data, names)
    sigma_layout, x_sigma, pen_sigma = _layout_and_matrix(
        spec.sigma_terms, data, transforms, n_rows, fit_mode=True)
    xi_layout, x_xi, pen_xi = _layout_and_matrix(
        spec.xi_terms, data, transforms, n_rows, fit_mode=True)
    info = DesignInfo(transforms=transforms, sigma_layout=sigma_layout,
                      xi_layout=xi_layout, xi_bounds=spec.xi_bounds)
    return DesignMatrices(x_sigma, x_xi, pen_sigma, pen_xi, info)


def design_rows(info, data):
    """Rebuild design rows for new data using stored transforms and knots.

    Returns ``(x_sigma, x_xi, extrapolation)`` where `extrapolation` marks
    rows with any covariate outside the observed training range (allowed,
    but flagged).
    """
    names = list(info.transforms)
    n_rows = len(np.asarray(data[names[0]])) if names else 1
    extrapolation = np.zeros(n_rows, dtype=bool)
    for name in names:
        if name not in data:
            raise DesignError(f"missing covariate {name!r}")
        x = np.asarray(data[name], dtype=float)
        bad = np.flatnonzero(~np.isfinite(x))
        if bad.size:
            raise DesignError(f"non-finite value for covariate {name!r} at row {bad[0]}")
        stats = info.transforms[name]
        extrapolation |= (x < stats.minimum) | (x > stats.maximum)
    _, x_sigma, _ = _layout_and_matrix(
        None, data, info.transforms, n_rows, fit_mode=False, layout=info.sigma_layout)
    _, x_xi, _ = _layout_and_matrix(
        None, data, info.transforms, n_rows, fit_mode=False, layout=info.xi_layout)
    return x_sigma, x_xi, extrapolation


# ---------------------------------------------------------------------------
# Links


def link_sigma(eta):
    """Scale link inverse: ``sigma = exp(eta)``."""
    return np.exp(eta)


def link_sigma_inv(sigma):
    sigma = np.asarray(sigma, dtype=float)
    if np.any(sigma <= 0.0):
        raise ValueError("sigma must be positive")
    out = np.log(sigma)
    return float(out) if out.ndim == 0 else out


def link_sigma_deriv(eta):
    """d sigma / d eta, equal to sigma itself under the log link."""
    return np.exp(eta)


def link_xi(eta, bounds=DEFAULT_XI_BOUNDS):
    """Shape link inverse: logistic map of eta onto the open interval."""
    lo, hi = bounds
    return lo + (hi - lo) * expit(eta)


def link_xi_inv(xi, bounds=DEFAULT_XI_BOUNDS):
    lo, hi = bounds
    xi = np.asarray(xi, dtype=float)
    if np.any(xi <= lo) or np.any(xi >= hi):
        raise ValueError(f"xi must lie strictly inside ({lo}, {hi})")
    out = logit((xi - lo) / (hi - lo))
    return float(out) if out.ndim == 0 else out


def link_xi_deriv(eta, bounds=DEFAULT_XI_BOUNDS):
    """d xi / d eta for the bounded-logistic link."""
    lo, hi = bounds
    p = expit(eta)
    return (hi - lo) * p * (1.0 - p)


def predict_params_arrays(beta_sigma, beta_xi, x_sigma, x_xi, xi_bounds=DEFAULT_XI_BOUNDS):
    """Map coefficient vectors to per-observation (sigma, xi) arrays."""
    beta_sigma = np.asarray(beta_sigma, dtype=float)
    beta_xi = np.asarray(beta_xi, dtype=float)
    if x_sigma.shape[1] != beta_sigma.size or x_xi.shape[1] != beta_xi.size:
        raise DesignError("coefficient/design dimension mismatch")
    sigma = link_sigma(x_sigma @ beta_sigma)
    xi = link_xi(x_xi @ beta_xi, xi_bounds)
    return sigma, xi


def predict_params(beta_sigma, beta_xi, row_sigma, row_xi, xi_bounds=DEFAULT_XI_BOUNDS):
    """Single-row version of `predict_params_arrays` returning `GpdParams`."""
    sigma, xi = predict_params_arrays(
        beta_sigma, beta_xi,
        np.atleast_2d(np.asarray(row_sigma, dtype=float)),
        np.atleast_2d(np.asarray(row_xi, dtype=float)),
        xi_bounds)
    return GpdParams(float(sigma[0]), float(xi[0]), bounds=xi_bounds)


def raw_scale_coefficients(beta, layout, transforms):
    """Translate intercept+linear coefficients back to the raw covariate scale.

    Only defined for layouts without spline blocks (used by the simulation
    harness to compare against raw-scale truth).
    """
    beta = np.asarray(beta, dtype=float)
    out = np.zeros_like(beta)
    intercept_idx = None
    for tc in layout.terms:
        if isinstance(tc.term, Intercept):
            intercept_idx = tc.start
    if intercept_idx is None:
        raise DesignError("layout has no intercept")
    out[intercept_idx] = beta[intercept_idx]
    for tc in layout.terms:
        if isinstance(tc.term, Spline):
            raise DesignError("raw-scale translation is undefined for spline terms")
        if isinstance(tc.term, Linear):
            stats = transforms[tc.term.covariate]
            out[tc.start] = beta[tc.start] / stats.scale
            out[intercept_idx] -= beta[tc.start] * stats.center / stats.scale
    return out
