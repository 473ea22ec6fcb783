"""Run configuration and the staged pipeline behind the CLI.

Every failure is attributed to a named stage (config, ingest, threshold,
extract, design, fit, rate, artifact, scenarios) via `PipelineError` so
scripts can tell input problems from numerical ones. Fit artifacts are
JSON with a schema-version field; readers reject unknown versions.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np

from .care import ExceedanceRateFit, care, fit_exceedance_rate
from .design import (
    CovariateStats,
    DesignInfo,
    Intercept,
    Linear,
    ModelSpec,
    ParamLayout,
    Spline,
    TermColumns,
    build_design,
    design_rows,
    predict_params_arrays,
)
from .io import IngestError, dump_json, ingest, load_json, read_table, write_csv
from .pot import (
    choose_threshold_by_quantile,
    extract_exceedances,
    mean_residual_life,
    response_series,
    threshold_stability,
)
from .robust import FitResult, RobustConfig, fit, sandwich_covariance
from .simulation import (
    Contamination,
    CovariateGenerator,
    ScenarioConfig,
    run_study,
    summarize,
)

__all__ = [
    "PipelineError",
    "RunConfig",
    "load_run_config",
    "run_fit",
    "run_threshold",
    "run_predict",
    "run_care",
    "run_simulate",
    "load_fit_artifact",
    "scenario_config_from_dict",
]

SCHEMA_VERSION = "1"

STABILITY_QUANTILES = (0.5, 0.6, 0.7, 0.75, 0.8, 0.85, 0.9, 0.95)


class PipelineError(Exception):
    """A failure attributed to a pipeline stage."""

    def __init__(self, stage, message):
        super().__init__(f"[stage={stage}] {message}")
        self.stage = stage
        self.message = message


def _stage(name, func):
    try:
        return func()
    except PipelineError:
        raise
    except Exception as err:
        raise PipelineError(name, str(err)) from err


def _parse_c(value):
    if value is None or value == "auto":
        return None
    if value == "inf":
        return math.inf
    return float(value)


def _c_to_config(c):
    if c is None:
        return "auto"
    if math.isinf(c):
        return "inf"
    return c


@dataclass(frozen=True)
class RunConfig:
    """Validated configuration for the data-analysis commands."""

    input: str
    response_kind: str
    count_column: str
    odds_correction: float
    threshold_quantile: float | None
    threshold_value: float | None
    spec: ModelSpec
    robust: RobustConfig
    rate_model: str
    output: str | None
    seed: int

    @property
    def family(self):
        return "dgpd" if self.response_kind == "count" else "gpd"


def _run_config_from_dict(obj, path="<config>"):
    def fail(msg):
        raise PipelineError("config", f"{path}: {msg}")

    if not isinstance(obj, dict):
        fail("config must be a JSON object")
    if "input" not in obj:
        fail("missing 'input'")
    response = obj.get("response", {})
    kind = response.get("kind", "count")
    if kind not in ("count", "odds"):
        fail(f"response.kind must be 'count' or 'odds', got {kind!r}")
    family = "dgpd" if kind == "count" else "gpd"
    threshold = obj.get("threshold", {"quantile": 0.9})
    quantile = threshold.get("quantile")
    value = threshold.get("value")
    if (quantile is None) == (value is None):
        fail("threshold needs exactly one of 'quantile' or 'value'")
    if quantile is not None and not 0.0 < float(quantile) < 1.0:
        fail("threshold.quantile must lie in (0, 1)")
    if value is not None and kind == "count" and float(value) != int(value):
        fail("count thresholds must be integer-valued")
    model = dict(obj.get("model", {}))
    model.setdefault("sigma_terms", ["intercept"])
    model.setdefault("xi_terms", ["intercept"])
    model["family"] = family
    try:
        spec = ModelSpec.from_config(model)
    except Exception as err:
        fail(f"model: {err}")
    robust_obj = obj.get("robust", {})
    try:
        robust = RobustConfig(
            c=_parse_c(robust_obj.get("c", "auto")),
            max_iter=int(robust_obj.get("max_iter", 200)),
            grad_tol=float(robust_obj.get("grad_tol", 1e-7)),
            n_restarts=int(robust_obj.get("n_restarts", 1)),
            correction_tail_eps=float(robust_obj.get("correction_tail_eps", 1e-10)),
            seed=int(obj.get("seed", 0)),
        )
    except Exception as err:
        fail(f"robust: {err}")
    rate_model = obj.get("rate_model", "logistic")
    if rate_model not in ("logistic", "constant"):
        fail(f"rate_model must be 'logistic' or 'constant', got {rate_model!r}")
    return RunConfig(
        input=str(obj["input"]),
        response_kind=kind,
        count_column=str(response.get("column", "positives")),
        odds_correction=float(response.get("odds_correction", 0.5)),
        threshold_quantile=float(quantile) if quantile is not None else None,
        threshold_value=float(value) if value is not None else None,
        spec=spec,
        robust=robust,
        rate_model=rate_model,
        output=obj.get("output"),
        seed=int(obj.get("seed", 0)),
    )


def load_run_config(path, seed_override=None):
    from dataclasses import replace

    obj = _stage("config", lambda: load_json(path))
    config = _run_config_from_dict(obj, path)
    if seed_override is not None:
        config = replace(config, seed=seed_override,
                         robust=replace(config.robust, seed=seed_override))
    return config


# ---------------------------------------------------------------------------
# Design-info serialization (artifact schema)


def _term_to_dict(tc):
    out = {"start": tc.start, "stop": tc.stop}
    if isinstance(tc.term, Intercept):
        out["type"] = "intercept"
    elif isinstance(tc.term, Linear):
        out["type"] = "linear"
        out["covariate"] = tc.term.covariate
    else:
        out["type"] = "spline"
        out["covariate"] = tc.term.covariate
        out["n_knots"] = tc.term.n_knots
        out["penalty"] = tc.term.penalty
        out["knots"] = [float(k) for k in tc.knots]
        out["constraint"] = [[float(v) for v in row] for row in tc.constraint]
    return out


def _term_from_dict(obj):
    kind = obj["type"]
    if kind == "intercept":
        term = Intercept()
        knots = constraint = None
    elif kind == "linear":
        term = Linear(obj["covariate"])
        knots = constraint = None
    else:
        term = Spline(obj["covariate"], int(obj["n_knots"]), float(obj["penalty"]))
        knots = np.array(obj["knots"], dtype=float)
        constraint = np.array(obj["constraint"], dtype=float)
    return TermColumns(term, int(obj["start"]), int(obj["stop"]), knots, constraint)


def _layout_to_dict(layout):
    return {
        "terms": [_term_to_dict(tc) for tc in layout.terms],
        "n_columns": layout.n_columns,
        "column_names": list(layout.column_names),
    }


def _layout_from_dict(obj):
    return ParamLayout(
        terms=tuple(_term_from_dict(t) for t in obj["terms"]),
        n_columns=int(obj["n_columns"]),
        column_names=tuple(obj["column_names"]),
    )


def _design_info_to_dict(info):
    return {
        "transforms": {
            name: {"center": s.center, "scale": s.scale,
                   "minimum": s.minimum, "maximum": s.maximum}
            for name, s in info.transforms.items()
        },
        "sigma_layout": _layout_to_dict(info.sigma_layout),
        "xi_layout": _layout_to_dict(info.xi_layout),
        "xi_bounds": list(info.xi_bounds),
    }


def _design_info_from_dict(obj):
    return DesignInfo(
        transforms={name: CovariateStats(**vals)
                    for name, vals in obj["transforms"].items()},
        sigma_layout=_layout_from_dict(obj["sigma_layout"]),
        xi_layout=_layout_from_dict(obj["xi_layout"]),
        xi_bounds=tuple(obj["xi_bounds"]),
    )


def _rate_fit_to_dict(rate):
    return {
        "threshold": rate.threshold,
        "response_kind": rate.response_kind,
        "coef": [float(v) for v in rate.coef],
        "covariate_names": list(rate.covariate_names),
        "centers": [float(v) for v in rate.centers],
        "scales": [float(v) for v in rate.scales],
        "minima": [float(v) for v in rate.minima],
        "maxima": [float(v) for v in rate.maxima],
        "converged": rate.converged,
        "separation_flag": rate.separation_flag,
        "n_exceedances": rate.n_exceedances,
        "n_days": rate.n_days,
    }


def _rate_fit_from_dict(obj):
    return ExceedanceRateFit(
        threshold=float(obj["threshold"]),
        response_kind=obj["response_kind"],
        coef=np.array(obj["coef"], dtype=float),
        covariate_names=tuple(obj["covariate_names"]),
        centers=np.array(obj["centers"], dtype=float),
        scales=np.array(obj["scales"], dtype=float),
        minima=np.array(obj["minima"], dtype=float),
        maxima=np.array(obj["maxima"], dtype=float),
        converged=bool(obj["converged"]),
        separation_flag=bool(obj["separation_flag"]),
        n_exceedances=int(obj["n_exceedances"]),
        n_days=int(obj["n_days"]),
    )


# ---------------------------------------------------------------------------
# Commands


def _weights_summary(weights):
    if weights.size == 0 or np.any(np.isnan(weights)):
        return None
    qs = np.quantile(weights, [0.25, 0.5, 0.75])
    return {"min": float(np.min(weights)), "q25": float(qs[0]),
            "median": float(qs[1]), "q75": float(qs[2]),
            "max": float(np.max(weights)), "mean": float(np.mean(weights))}


def run_fit(config):
    """Ingest -> threshold -> extract -> design -> fit -> rate; build the
    fit artifact. Returns (artifact dict, FitResult)."""
    series, report = _stage("ingest", lambda: ingest(config.input))

    def _threshold():
        if config.threshold_value is not None:
            return float(config.threshold_value)
        response = response_series(series, config.response_kind,
                                   config.count_column, config.odds_correction)
        return choose_threshold_by_quantile(response, config.threshold_quantile,
                                            config.response_kind)

    u = _stage("threshold", _threshold)
    spec = config.spec
    known = tuple(n for n in spec.covariate_names() if n in series.covariates)
    exc = _stage("extract", lambda: extract_exceedances(
        series, config.response_kind, u, known,
        count_column=config.count_column, odds_correction=config.odds_correction))

    def _design():
        missing = [n for n in spec.covariate_names() if n not in series.covariates]
        if missing:
            from .design import DesignError
            raise DesignError(f"unknown covariate {missing[0]!r}")
        return build_design(exc.covariate_rows, spec, n_rows=len(exc))

    dm = _stage("design", _design)

    def _fit():
        result = fit(exc, dm, config.robust, spec)
        if result.converged:
            result.covariance = sandwich_covariance(result, exc, dm, config.robust)
        return result

    result = _stage("fit", _fit)
    rate = _stage("rate", lambda: fit_exceedance_rate(
        series, u, known, response_kind=config.response_kind,
        count_column=config.count_column, odds_correction=config.odds_correction,
        rate_model=config.rate_model))

    artifact = {
        "schema_version": SCHEMA_VERSION,
        "kind": "fit",
        "input": config.input,
        "seed": config.seed,
        "response": {"kind": config.response_kind, "count_column": config.count_column,
                     "odds_correction": config.odds_correction},
        "threshold": float(u),
        "n_exceedances": len(exc),
        "excluded": {"missing_response": exc.n_missing_response,
                     "missing_covariates": exc.n_missing_covariates},
        "ingest": report.to_dict(),
        "model": spec.to_config(),
        "coefficients": {
            "sigma": {"names": list(dm.info.sigma_layout.column_names),
                      "values": [float(v) for v in result.beta_sigma]},
            "xi": {"names": list(dm.info.xi_layout.column_names),
                   "values": [float(v) for v in result.beta_xi]},
        },
        "standardization": _design_info_to_dict(dm.info),
        "convergence": {"converged": result.converged,
                        "iterations": result.iterations,
                        "gradient_norm": result.gradient_norm,
                        "objective": result.objective,
                        "restarts": result.restarts,
                        "message": result.message},
        "robust": {"c": _c_to_config(config.robust.c),
                   "c_used": result.c_used,
                   "weights_summary": _weights_summary(result.weights)},
        "covariance": (None if result.covariance is None
                       else [[float(v) for v in row] for row in result.covariance]),
        "rate_model": _rate_fit_to_dict(rate),
    }
    return artifact, result


def load_fit_artifact(path):
    """Rebuild (FitResult, ExceedanceRateFit, artifact dict) from disk."""
    data = _stage("artifact", lambda: load_json(path))
    version = data.get("schema_version")
    if version != SCHEMA_VERSION:
        raise PipelineError("artifact",
                            f"{path}: unsupported schema version {version!r} "
                            f"(expected {SCHEMA_VERSION!r})")
    if data.get("kind") != "fit":
        raise PipelineError("artifact", f"{path}: not a fit artifact")
    spec = ModelSpec.from_config(data["model"])
    info = _design_info_from_dict(data["standardization"])
    conv = data["convergence"]
    c_used = data["robust"]["c_used"]
    result = FitResult(
        beta_sigma=np.array(data["coefficients"]["sigma"]["values"], dtype=float),
        beta_xi=np.array(data["coefficients"]["xi"]["values"], dtype=float),
        weights=np.array([]),
        objective=float(conv["objective"]),
        converged=bool(conv["converged"]),
        iterations=int(conv["iterations"]),
        gradient_norm=float(conv["gradient_norm"]),
        covariance=(None if data.get("covariance") is None
                    else np.array(data["covariance"], dtype=float)),
        standardization=info,
        spec_echo=spec,
        c_used=math.inf if c_used == "inf" else float(c_used),
        restarts=int(conv.get("restarts", 0)),
        message=conv.get("message", ""),
    )
    rate = _rate_fit_from_dict(data["rate_model"])
    return result, rate, data


def run_threshold(config, out_dir):
    """Emit the stability and mean-residual-life diagnostic tables."""
    series, _ = _stage("ingest", lambda: ingest(config.input))
    response = response_series(series, config.response_kind,
                               config.count_column, config.odds_correction)

    def _tables():
        stability = threshold_stability(
            series, config.response_kind, list(STABILITY_QUANTILES),
            count_column=config.count_column, odds_correction=config.odds_correction)
        clean = response[~np.isnan(response)]
        lo, hi = float(np.min(clean)), float(np.quantile(clean, 0.98))
        grid = np.linspace(lo, hi, 30)
        mrl = mean_residual_life(response, grid)
        return stability, mrl

    stability, mrl = _stage("threshold", _tables)
    os.makedirs(out_dir, exist_ok=True)
    stability_path = os.path.join(out_dir, "stability.csv")
    write_csv(stability_path,
              ["quantile", "threshold", "n_exceedances", "sigma_modified",
               "xi", "converged", "error"],
              [[r.quantile, r.threshold, r.n_exceedances, r.sigma_modified,
                r.xi, r.converged, r.error] for r in stability])
    mrl_path = os.path.join(out_dir, "mrl.csv")
    write_csv(mrl_path,
              ["threshold", "mean_excess", "standard_error", "count", "flagged"],
              [[r.threshold, r.mean_excess, r.standard_error, r.count, r.flagged]
               for r in mrl])
    return stability_path, mrl_path


def run_predict(artifact_path, data_path, out_dir):
    """Per-row fitted (sigma, xi) for new covariate rows."""
    result, _, _ = load_fit_artifact(artifact_path)
    series, _ = _stage("ingest", lambda: ingest(data_path))
    info = result.standardization
    required = list(info.transforms)
    rows = []
    n = len(series)
    ok = np.ones(n, dtype=bool)
    for name in required:
        if name not in series.covariates:
            raise PipelineError("predict", f"data is missing covariate {name!r}")
        ok &= ~np.isnan(series.covariates[name])
    idx = np.flatnonzero(ok)
    if idx.size:
        data = {name: series.covariates[name][idx] for name in required}
        x_sigma, x_xi, extrap = _stage("predict", lambda: (
            design_rows(info, data) if required
            else (np.ones((idx.size, 1)), np.ones((idx.size, 1)),
                  np.zeros(idx.size, dtype=bool))))
        sigma, xi = predict_params_arrays(result.beta_sigma, result.beta_xi,
                                          x_sigma, x_xi, info.xi_bounds)
    position = {int(i): j for j, i in enumerate(idx)}
    for i in range(n):
        if i in position:
            j = position[i]
            rows.append([series.dates[i], float(sigma[j]), float(xi[j]),
                         bool(extrap[j]), ""])
        else:
            rows.append([series.dates[i], math.nan, math.nan, False,
                         "missing covariate"])
    os.makedirs(out_dir, exist_ok=True)
    out_path = os.path.join(out_dir, "params.csv")
    write_csv(out_path, ["date", "sigma", "xi", "extrapolation", "error"], rows)
    return out_path


def run_care(artifact_paths, scenario_path, alphas, out_dir):
    """CaRe table: one row per (fit, scenario, alpha)."""
    fits = []
    for path in artifact_paths:
        result, rate, _ = load_fit_artifact(path)
        label = os.path.splitext(os.path.basename(path))[0]
        fits.append((label, result, rate))
    for alpha in alphas:
        if not 0.0 < alpha < 1.0:
            raise PipelineError("care", f"alpha {alpha} outside (0, 1)")
    header, raw_rows = _stage("scenarios", lambda: read_table(scenario_path))
    rows = []
    warner = []
    if not raw_rows:
        warner.append(f"scenario file {scenario_path} has no rows; empty output")
    for s_idx, raw in enumerate(raw_rows):
        for label, result, rate in fits:
            required = sorted(set(result.standardization.transforms)
                              | set(rate.covariate_names))
            scenario = {}
            error = ""
            for name in required:
                cell = raw.get(name, "")
                if cell is None or str(cell).strip() == "":
                    error = f"missing scenario covariate {name!r}"
                    break
                try:
                    scenario[name] = float(cell)
                except ValueError:
                    error = f"scenario covariate {name!r} is not numeric: {cell!r}"
                    break
            if error:
                for alpha in alphas:
                    rows.append([label, s_idx, alpha, rate.threshold, math.nan,
                                 math.nan, math.nan, False, False, error])
                continue
            for alpha in alphas:
                est = care(result, rate, scenario, alpha)
                rows.append([label, s_idx, alpha, est.threshold, est.zeta,
                             est.tail_quantile, est.value,
                             est.censored_below_threshold, est.extrapolation, ""])
    os.makedirs(out_dir, exist_ok=True)
    out_path = os.path.join(out_dir, "care.csv")
    write_csv(out_path,
              ["fit", "scenario", "alpha", "threshold", "zeta", "tail_quantile",
               "value", "censored", "extrapolation", "error"],
              rows)
    return out_path, warner


def scenario_config_from_dict(obj, path="<study>", seed_override=None):
    def fail(msg):
        raise PipelineError("config", f"{path}: {msg}")

    try:
        covariates = tuple(
            CovariateGenerator(
                name=c["name"], mean=float(c.get("mean", 0.0)),
                amplitude=float(c.get("amplitude", 1.0)),
                period=float(c.get("period", 365.25)),
                phase=float(c.get("phase", 0.0)),
                noise_sd=float(c.get("noise_sd", 0.25)))
            for c in obj.get("covariates", []))
        contamination = obj.get("contamination", {})
        return ScenarioConfig(
            n_days=int(obj["n_days"]),
            family=obj.get("family", "dgpd"),
            threshold=float(obj["threshold"]),
            beta_sigma=tuple(float(v) for v in obj["beta_sigma"]),
            beta_xi=tuple(float(v) for v in obj["beta_xi"]),
            covariates=covariates,
            sigma_covariates=tuple(obj.get("sigma_covariates", [])),
            xi_covariates=tuple(obj.get("xi_covariates", [])),
            exceedance_prob=float(obj.get("exceedance_prob", 0.2)),
            contamination=Contamination(
                fraction=float(contamination.get("fraction", 0.0)),
                mechanism=contamination.get("mechanism", "multiply"),
                magnitude=float(contamination.get("magnitude", 10.0))),
            n_replicates=int(obj.get("n_replicates", 100)),
            base_seed=int(seed_override if seed_override is not None
                          else obj.get("base_seed", 0)),
            count_column=obj.get("count_column", "positives"),
            fit_restarts=int(obj.get("fit_restarts", 0)),
            robust_c=_parse_c(obj.get("robust_c", "auto")),
        )
    except PipelineError:
        raise
    except KeyError as err:
        fail(f"missing field {err}")
    except Exception as err:
        fail(str(err))


def run_simulate(study_path, out_dir, seed_override=None):
    """Run the robust-vs-classical study; emit per-replicate CSV + summary JSON."""
    obj = _stage("config", lambda: load_json(study_path))
    config = scenario_config_from_dict(obj, study_path, seed_override)
    result = _stage("simulate", lambda: run_study(config))
    summary = summarize(result)
    coef_names = list(config.coefficient_truth())
    os.makedirs(out_dir, exist_ok=True)
    rep_path = os.path.join(out_dir, "replicates.csv")
    header = (["replicate", "estimator", "converged", "iterations", "c_used",
               "n_exceedances", "n_contaminated"] + coef_names
              + ["mean_weight_contaminated", "mean_weight_clean", "error"])
    rows = []
    for rec in result.records:
        rows.append([rec.replicate, rec.estimator, rec.converged, rec.iterations,
                     rec.c_used, rec.n_exceedances, rec.n_contaminated]
                    + [rec.coefficients.get(name, math.nan) for name in coef_names]
                    + [rec.mean_weight_contaminated, rec.mean_weight_clean, rec.error])
    write_csv(rep_path, header, rows)
    summary_path = os.path.join(out_dir, "summary.json")
    dump_json(summary_path, {
        "schema_version": SCHEMA_VERSION,
        "kind": "study_summary",
        "truth": config.coefficient_truth(),
        "summary": summary,
    })
    return rep_path, summary_path
