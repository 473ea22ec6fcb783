"""Acceptance suite: every criterion at its stated tolerance and runtime
budget, printing one pass/fail line per criterion.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the lines live;
without ``-s`` they appear in the captured output of failing tests.
"""

import json
import math
import os
import time
import warnings

import numpy as np
import pytest

from potcare.care import care, care_curve, congestion_probability
from potcare.cli import main
from potcare.design import (
    Intercept,
    Linear,
    ModelSpec,
    Spline,
    build_design,
    raw_scale_coefficients,
)
from potcare.distributions import (
    dgpd_cdf,
    dgpd_pmf,
    dgpd_quantile,
    dgpd_sample,
    gpd_cdf,
    gpd_quantile,
    gpd_sample,
)
from potcare.pot import extract_exceedances
from potcare.robust import RobustConfig, fit, robust_gradient, robust_objective
from potcare.simulation import (
    Contamination,
    CovariateGenerator,
    ScenarioConfig,
    generate,
    run_study,
    summarize,
)
from tests.test_care import make_rate_fit, make_tail_fit

REPO = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
CONFIGS = os.path.join(REPO, "configs")

SIGMA_GRID = (0.1, 1.0, 10.0)
XI_GRID = (-0.4, -0.1, 0.0, 0.1, 0.5, 0.9)


def finish(number, name, budget_seconds, started, checks):
    elapsed = time.time() - started
    failed = [label for label, ok in checks if not ok]
    if elapsed > budget_seconds:
        failed.append(f"runtime {elapsed:.1f}s over the {budget_seconds:.0f}s budget")
    verdict = "PASS" if not failed else "FAIL"
    print(f"[criterion {number}] {name}: {verdict} ({elapsed:.1f}s)")
    for label in failed:
        print(f"    failed: {label}")
    assert not failed, f"criterion {number} failed: {failed}"


def test_criterion_1_distribution_correctness():
    started = time.time()
    checks = []

    worst_norm = 0.0
    for sigma in SIGMA_GRID:
        for xi in XI_GRID:
            kstar = min(dgpd_quantile(0.999999, sigma, xi), 200_000)
            ks = np.arange(0, kstar + 1)
            total = float(np.sum(dgpd_pmf(ks, sigma, xi)))
            total += 1.0 - dgpd_cdf(kstar, sigma, xi)
            worst_norm = max(worst_norm, abs(1.0 - total))
    checks.append((f"DGPD normalization within 1e-8 (worst {worst_norm:.2e})",
                   worst_norm < 1e-8))

    probs = np.linspace(0.0, 0.999999, 400)
    worst_rt = 0.0
    for sigma in SIGMA_GRID:
        for xi in XI_GRID:
            q = gpd_quantile(probs, sigma, xi)
            back = gpd_cdf(q, sigma, xi)
            worst_rt = max(worst_rt, float(np.max(
                np.abs(back - probs) / np.maximum(probs, 1e-12))))
    checks.append((f"GPD round trip within 1e-10 relative (worst {worst_rt:.2e})",
                   worst_rt < 1e-10))

    rng = np.random.default_rng(1001)
    mismatches = 0
    for _ in range(10_000):
        sigma = float(np.exp(rng.uniform(np.log(0.2), np.log(5.0))))
        xi = float(rng.uniform(-0.45, 0.9))
        prob = float(rng.uniform(0.0, 0.99))
        k = dgpd_quantile(prob, sigma, xi)
        grid = np.arange(0, k + 3)
        cdf = dgpd_cdf(grid, sigma, xi)
        while cdf[-1] < prob:  # extend until the scan target is bracketed
            grid = np.arange(0, 2 * grid[-1] + 3)
            cdf = dgpd_cdf(grid, sigma, xi)
        scan = int(np.argmax(cdf >= prob))
        if scan != k:
            mismatches += 1
    checks.append((f"DGPD quantile equals brute-force scan on 1e4 cases "
                   f"({mismatches} mismatches)", mismatches == 0))

    finish(1, "distribution correctness", 10.0, started, checks)


def _fd_gradient(func, theta):
    out = np.empty(theta.size)
    for j in range(theta.size):
        h = 1e-6 * max(1.0, abs(theta[j]))
        tp, tm = theta.copy(), theta.copy()
        tp[j] += h
        tm[j] -= h
        out[j] = (func(tp) - func(tm)) / (2.0 * h)
    return out


def test_criterion_2_gradient_suite():
    started = time.time()
    rng = np.random.default_rng(2002)
    n_points = 0
    worst = 0.0
    worst_label = ""

    def check_points(family, c, spec, dm, values, centers, spread, count):
        nonlocal n_points, worst, worst_label
        cfg = RobustConfig(c=c)
        p_sigma = dm.x_sigma.shape[1]
        total = p_sigma + dm.x_xi.shape[1]

        def objective(theta):
            return robust_objective(theta[:p_sigma], theta[p_sigma:],
                                    values, dm, cfg, spec)

        done = 0
        while done < count:
            theta = np.array(centers) + rng.uniform(-spread, spread, total)
            if not np.isfinite(objective(theta)):
                continue
            g = robust_gradient(theta[:p_sigma], theta[p_sigma:],
                                values, dm, cfg, spec)
            fd = _fd_gradient(objective, theta)
            rel = float(np.max(np.abs(g - fd) / np.maximum(1.0, np.abs(fd))))
            if rel > worst:
                worst = rel
                worst_label = f"{family} c={c} spline={p_sigma > 3}"
            n_points += 1
            done += 1

    n = 40
    x1 = rng.normal(size=n)
    plain_spec = {
        "dgpd": ModelSpec(family="dgpd",
                          sigma_terms=(Intercept(), Linear("x1")),
                          xi_terms=(Intercept(), Linear("x1"))),
        "gpd": ModelSpec(family="gpd",
                         sigma_terms=(Intercept(), Linear("x1")),
                         xi_terms=(Intercept(), Linear("x1"))),
    }
    values = {
        "dgpd": dgpd_sample(np.random.default_rng(7), 2.0, 0.2, n).astype(float),
        "gpd": gpd_sample(np.random.default_rng(8), 2.0, 0.2, n),
    }
    for family in ("dgpd", "gpd"):
        dm = build_design({"x1": x1}, plain_spec[family])
        for c in (2.0, 5.0, math.inf):
            check_points(family, c, plain_spec[family], dm, values[family],
                         [0.7, 0.1, -0.3, 0.05], 0.3, 12)

    m = 60
    xs = rng.uniform(-1.0, 1.0, m)
    spline_values = {
        "dgpd": dgpd_sample(np.random.default_rng(9), 2.0, 0.1, m).astype(float),
        "gpd": gpd_sample(np.random.default_rng(10), 2.0, 0.1, m),
    }
    for family in ("dgpd", "gpd"):
        spec = ModelSpec(family=family,
                         sigma_terms=(Intercept(), Spline("x1", 5, 1.5)),
                         xi_terms=(Intercept(),))
        dm = build_design({"x1": xs}, spec)
        p = dm.x_sigma.shape[1]
        centers = [0.7] + [0.0] * (p - 1) + [-0.3]
        cs = (2.0, 5.0, math.inf) if family == "dgpd" else (2.0, math.inf)
        for c in cs:
            check_points(family, c, spec, dm, spline_values[family],
                         centers, 0.2, 6)

    checks = [
        (f"at least 100 interior points checked ({n_points})", n_points >= 100),
        (f"max relative gradient error {worst:.2e} at [{worst_label}] < 1e-5",
         worst < 1e-5),
    ]
    finish(2, "gradient suite", 60.0, started, checks)


TRUTH_C3 = np.array([0.7, 0.25, -0.2, -0.4])
COEF_NAMES_C3 = ("sigma.intercept", "sigma.x1", "sigma.x2", "xi.intercept")


def _c3_config(n_days):
    return ScenarioConfig(
        n_days=n_days, family="dgpd", threshold=20.0,
        beta_sigma=(0.7, 0.25, -0.2), beta_xi=(-0.4,),
        covariates=(CovariateGenerator("x1", noise_sd=0.4),
                    CovariateGenerator("x2", period=180.0, noise_sd=0.4)),
        sigma_covariates=("x1", "x2"), exceedance_prob=0.2,
        n_replicates=1, base_seed=303)


def _ml_replicates(config, reps):
    spec = config.model_spec()
    cfg = RobustConfig(c=math.inf, n_restarts=0)
    rows = []
    for r in range(reps):
        sim = generate(config, r)
        exc = extract_exceedances(sim.series, "count", config.threshold,
                                  spec.covariate_names())
        dm = build_design(exc.covariate_rows, spec, n_rows=len(exc))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            res = fit(exc, dm, cfg, spec)
        if not res.converged:
            continue
        raw_s = raw_scale_coefficients(res.beta_sigma, dm.info.sigma_layout,
                                       dm.info.transforms)
        raw_x = raw_scale_coefficients(res.beta_xi, dm.info.xi_layout,
                                       dm.info.transforms)
        rows.append(np.concatenate([raw_s, raw_x]))
    return np.array(rows)


def test_criterion_3_ml_recovery_and_consistency():
    started = time.time()
    checks = []

    estimates = _ml_replicates(_c3_config(10_000), 100)
    checks.append((f"convergence on {estimates.shape[0]}/100 replicates",
                   estimates.shape[0] >= 95))
    bias_mid = estimates.mean(axis=0) - TRUTH_C3
    se_mid = estimates.std(axis=0, ddof=1) / math.sqrt(estimates.shape[0])
    for name, b, s in zip(COEF_NAMES_C3, bias_mid, se_mid):
        checks.append((f"{name} recovered within 3 MC SEs "
                       f"(|bias|={abs(b):.5f}, 3se={3 * s:.5f})", abs(b) <= 3.0 * s))

    small = _ml_replicates(_c3_config(2_500), 60)
    large = _ml_replicates(_c3_config(40_000), 40)
    seq = []
    for est in (small, estimates, large):
        seq.append((est.mean(axis=0) - TRUTH_C3,
                    est.std(axis=0, ddof=1) / math.sqrt(est.shape[0])))
    for j, name in enumerate(COEF_NAMES_C3):
        for i in range(2):
            b0, s0 = abs(seq[i][0][j]), seq[i][1][j]
            b1, s1 = abs(seq[i + 1][0][j]), seq[i + 1][1][j]
            ok = b1 <= b0 + 2.0 * (s0 + s1)
            checks.append((f"{name} |bias| nonincreasing within MC error at step "
                           f"{i} ({b0:.5f} -> {b1:.5f})", ok))

    finish(3, "ML recovery and consistency", 15 * 60.0, started, checks)


def _c4_config(fraction, base_seed, n_replicates):
    return ScenarioConfig(
        n_days=2000, family="dgpd", threshold=20.0,
        beta_sigma=(0.8, 0.3), beta_xi=(-0.45,),
        covariates=(CovariateGenerator("x1", noise_sd=0.4),),
        sigma_covariates=("x1",), exceedance_prob=0.2,
        contamination=Contamination(fraction=fraction, magnitude=10.0),
        n_replicates=n_replicates, base_seed=base_seed)


def test_criterion_4_robustness_comparison():
    started = time.time()
    checks = []

    contaminated = run_study(_c4_config(0.05, 404, 200))
    summary = summarize(contaminated)
    rmse_ml = summary["ml"]["coefficients"]["sigma.intercept"]["rmse"]
    rmse_rob = summary["robust"]["coefficients"]["sigma.intercept"]["rmse"]
    checks.append((f"robust RMSE {rmse_rob:.4f} < ML RMSE {rmse_ml:.4f} "
                   f"for the scale intercept under 5% x10 contamination",
                   rmse_rob < rmse_ml))

    ordered = 0
    total = 0
    for rec in contaminated.records:
        if rec.estimator != "robust":
            continue
        total += 1
        if (not rec.error and math.isfinite(rec.mean_weight_contaminated)
                and rec.mean_weight_contaminated < rec.mean_weight_clean):
            ordered += 1
    fraction = ordered / total
    checks.append((f"weights ordered (contaminated < clean) in "
                   f"{fraction:.1%} of {total} replicates (need >= 95%)",
                   fraction >= 0.95))

    clean = summarize(run_study(_c4_config(0.0, 505, 200)))
    for name in ("sigma.intercept", "sigma.x1", "xi.intercept"):
        r = clean["robust"]["coefficients"][name]["rmse"]
        m = clean["ml"]["coefficients"][name]["rmse"]
        checks.append((f"clean-data efficiency {name}: robust RMSE {r:.4f} <= "
                       f"1.25 x ML RMSE {m:.4f}", r <= 1.25 * m))

    finish(4, "robustness vs classical (qualitative replication)",
           30 * 60.0, started, checks)


def test_criterion_5_care_correctness():
    started = time.time()
    checks = []

    tail = make_tail_fit(1.0, 0.0, family="gpd")
    rate = make_rate_fit(0.1, 100.0)
    value = care(tail, rate, {}, 0.95).value
    checks.append((f"worked example: care value {value!r} equals 100 + ln 2 "
                   f"within 1e-9", abs(value - (100.0 + math.log(2.0))) < 1e-9))

    tail2 = make_tail_fit(1.3, 0.2, family="gpd")
    rate2 = make_rate_fit(0.15, 80.0)
    worst_rt = 0.0
    for alpha in np.linspace(0.86, 0.999, 25):
        v = care(tail2, rate2, {}, float(alpha)).value
        back = congestion_probability(tail2, rate2, {}, v).probability
        worst_rt = max(worst_rt, abs(back - (1.0 - alpha)))
    checks.append((f"continuous care/congestion round trip within 1e-9 "
                   f"(worst {worst_rt:.2e})", worst_rt < 1e-9))

    rng = np.random.default_rng(5005)
    violations = 0
    for _ in range(1000):
        sigma = float(rng.uniform(0.5, 4.0))
        xi = float(rng.uniform(-0.3, 0.8))
        zeta = float(rng.uniform(0.05, 0.5))
        u = float(rng.integers(10, 200))
        alpha = float(rng.uniform(1.0 - zeta + 1e-6, 0.9999))
        t = make_tail_fit(sigma, xi, family="dgpd")
        z = make_rate_fit(zeta, u, response_kind="count")
        est = care(t, z, {}, alpha)
        at_value = congestion_probability(t, z, {}, est.value).probability
        below = congestion_probability(t, z, {}, est.value - 1.0).probability
        if not (at_value <= 1.0 - alpha + 1e-12 and below > 1.0 - alpha - 1e-12):
            violations += 1
    checks.append((f"discrete bracketing inequality on 1e3 random cases "
                   f"({violations} violations)", violations == 0))

    grid = list(np.linspace(0.01, 0.999, 99))
    monotone = True
    for t, z in ((tail, rate), (make_tail_fit(2.0, 0.1, family="dgpd"),
                                make_rate_fit(0.2, 30.0, response_kind="count"))):
        values = [est.value for est in care_curve(t, z, {}, grid)]
        monotone &= all(b >= a for a, b in zip(values, values[1:]))
    checks.append(("care_curve nondecreasing on 99-point grids", monotone))

    finish(5, "CaRe correctness", 10.0, started, checks)


def test_criterion_6_pipeline_determinism(tmp_path, capsys):
    started = time.time()
    checks = []

    def run_twice(label, args_fn, outputs):
        dirs = [str(tmp_path / f"{label}{i}") for i in (1, 2)]
        codes = [main(args_fn(d)) for d in dirs]
        same = all(
            open(os.path.join(dirs[0], name), "rb").read()
            == open(os.path.join(dirs[1], name), "rb").read()
            for name in outputs)
        return codes, same

    counts_config = os.path.join(CONFIGS, "fit_counts.json")
    codes, same = run_twice(
        "fit", lambda d: ["fit", "--config", counts_config, "--out", d, "--quiet"],
        ["fit.json"])
    checks.append(("fit exits 0 on the bundled example", codes == [0, 0]))
    checks.append(("fit artifacts byte-identical across reruns", same))

    artifact = str(tmp_path / "fit1" / "fit.json")
    scenarios = os.path.join(CONFIGS, "scenarios.csv")
    codes, same = run_twice(
        "care", lambda d: ["care", "--fit", artifact, "--scenarios", scenarios,
                           "--alphas", "0.9,0.95,0.99", "--out", d, "--quiet"],
        ["care.csv"])
    checks.append(("care exits 0", codes == [0, 0]))
    checks.append(("care tables byte-identical across reruns", same))

    study = os.path.join(CONFIGS, "study_tiny.json")
    codes, same = run_twice(
        "sim", lambda d: ["simulate", "--config", study, "--out", d, "--quiet"],
        ["replicates.csv", "summary.json"])
    checks.append(("simulate exits 0", codes == [0, 0]))
    checks.append(("simulate outputs byte-identical across reruns", same))

    # exit-code contract on the three error scenarios
    from tests.test_cli import tiny_csv, write_config
    cfg = write_config(tmp_path, name="bad_cov.json", input=tiny_csv(tmp_path),
                       model={"sigma_terms": ["intercept", "pressure"],
                              "xi_terms": ["intercept"]})
    code = main(["fit", "--config", cfg, "--out", str(tmp_path / "e1"), "--quiet"])
    err = capsys.readouterr().err
    checks.append(("unknown covariate: exit 1 at stage design",
                   code == 1 and "stage=design" in err))

    cfg = write_config(tmp_path, name="high_u.json", input=tiny_csv(tmp_path),
                       threshold={"value": 10_000})
    code = main(["fit", "--config", cfg, "--out", str(tmp_path / "e2"), "--quiet"])
    err = capsys.readouterr().err
    checks.append(("threshold above data: exit 1 at stage extract with "
                   "'empty exceedance set'",
                   code == 1 and "stage=extract" in err
                   and "empty exceedance set" in err))

    cfg = write_config(tmp_path, name="one_iter.json", input=tiny_csv(tmp_path),
                       robust={"c": "inf", "max_iter": 1, "n_restarts": 0})
    out3 = str(tmp_path / "e3")
    code = main(["fit", "--config", cfg, "--out", out3, "--quiet"])
    artifact_written = os.path.exists(os.path.join(out3, "fit.json"))
    checks.append(("non-convergence: exit 2 with artifact still written",
                   code == 2 and artifact_written))

    finish(6, "pipeline determinism and exit codes", 60.0, started, checks)
