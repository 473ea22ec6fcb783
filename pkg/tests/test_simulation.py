import math

import numpy as np
import pytest
from scipy.stats import chisquare, kstest

from potcare.distributions import dgpd_pmf, gpd_cdf
from potcare.simulation import (
    Contamination,
    CovariateGenerator,
    ReplicateRecord,
    ScenarioConfig,
    StudyResult,
    contaminate,
    generate,
    run_study,
    summarize,
)


def count_config(**kwargs):
    defaults = dict(
        n_days=1000,
        family="dgpd",
        threshold=20.0,
        beta_sigma=(0.7, 0.3),
        beta_xi=(-0.4,),
        covariates=(CovariateGenerator("temp", mean=0.0, amplitude=1.0, noise_sd=0.3),),
        sigma_covariates=("temp",),
        xi_covariates=(),
        exceedance_prob=0.3,
        n_replicates=3,
        base_seed=7,
    )
    defaults.update(kwargs)
    return ScenarioConfig(**defaults)


class TestConfig:
    def test_validation(self):
        with pytest.raises(ValueError):
            count_config(n_days=0)
        with pytest.raises(ValueError):
            count_config(beta_sigma=(0.7,))
        with pytest.raises(ValueError):
            count_config(sigma_covariates=("nope",))
        with pytest.raises(ValueError):
            Contamination(fraction=1.0)
        with pytest.raises(ValueError):
            Contamination(mechanism="zap")

    def test_truth_names(self):
        truth = count_config().coefficient_truth()
        assert truth == {"sigma.intercept": 0.7, "sigma.temp": 0.3, "xi.intercept": -0.4}


class TestGenerate:
    def test_deterministic(self):
        config = count_config()
        a = generate(config, 2)
        b = generate(config, 2)
        assert a.series.dates == b.series.dates
        assert np.array_equal(a.series.positives, b.series.positives)
        assert np.array_equal(a.series.covariates["temp"], b.series.covariates["temp"])
        assert np.array_equal(a.tail_mask, b.tail_mask)

    def test_replicates_differ(self):
        config = count_config()
        a = generate(config, 0)
        b = generate(config, 1)
        assert not np.array_equal(a.series.positives, b.series.positives)

    def test_no_contamination_annotation(self):
        sim = generate(count_config(), 0)
        assert not sim.contamination_mask.any()

    def test_bulk_stays_at_or_below_threshold(self):
        sim = generate(count_config(), 0)
        bulk = sim.series.positives[~sim.tail_mask]
        assert np.all(bulk <= sim.threshold)
        tail = sim.series.positives[sim.tail_mask]
        assert np.all(tail > sim.threshold)

    def test_continuous_tail_distribution_pit(self):
        config = ScenarioConfig(
            n_days=10_000, family="gpd", threshold=2.0,
            beta_sigma=(0.2, 0.25), beta_xi=(-0.5,),
            covariates=(CovariateGenerator("temp", noise_sd=0.4),),
            sigma_covariates=("temp",), exceedance_prob=0.5, base_seed=11)
        sim = generate(config, 0)
        odds = sim.series.positives / sim.series.negatives
        tail = sim.tail_mask
        z = odds[tail] - config.threshold
        pit = gpd_cdf(np.maximum(z, 0.0), sim.true_sigma[tail], sim.true_xi[tail])
        # 1% critical value for the KS statistic is 1.63 / sqrt(n)
        stat = kstest(pit, "uniform").statistic
        assert stat < 1.63 / math.sqrt(tail.sum())

    def test_discrete_tail_distribution_chisquare(self):
        config = ScenarioConfig(
            n_days=10_000, family="dgpd", threshold=10.0,
            beta_sigma=(1.0,), beta_xi=(-0.4,),
            exceedance_prob=0.5, base_seed=13)
        sim = generate(config, 0)
        w = sim.series.positives[sim.tail_mask] - 11
        sigma = float(sim.true_sigma[0])
        xi = float(sim.true_xi[0])
        kmax = 12
        observed = np.array([np.sum(w == k) for k in range(kmax)]
                            + [np.sum(w >= kmax)], dtype=float)
        probs = np.array([dgpd_pmf(k, sigma, xi) for k in range(kmax)])
        probs = np.append(probs, 1.0 - probs.sum())
        result = chisquare(observed, probs * w.size)
        assert result.pvalue > 0.01


class TestContaminate:
    def test_identity_at_zero(self):
        config = count_config()
        sim = generate(config, 0)
        out = contaminate(sim, config, np.random.default_rng(0))
        assert not out.contamination_mask.any()
        assert np.array_equal(out.series.positives, sim.series.positives)

    def test_exact_ceiling_count(self):
        config = count_config(contamination=Contamination(fraction=0.05))
        sim = generate(config, 0)
        out = contaminate(sim, config, np.random.default_rng(1))
        expected = math.ceil(0.05 * sim.tail_mask.sum())
        assert out.contamination_mask.sum() == expected

    def test_multiply_mechanism(self):
        config = count_config(contamination=Contamination(fraction=0.1, magnitude=10.0))
        sim = generate(config, 0)
        out = contaminate(sim, config, np.random.default_rng(2))
        hit = out.contamination_mask
        assert np.array_equal(out.series.positives[hit], sim.series.positives[hit] * 10)
        assert np.array_equal(out.series.positives[~hit], sim.series.positives[~hit])

    def test_add_mechanism(self):
        config = count_config(contamination=Contamination(fraction=0.1, mechanism="add",
                                                          magnitude=50.0))
        sim = generate(config, 0)
        out = contaminate(sim, config, np.random.default_rng(3))
        hit = out.contamination_mask
        assert np.array_equal(out.series.positives[hit], sim.series.positives[hit] + 50)


class TestRunStudy:
    def test_record_counts_and_determinism(self):
        config = count_config(n_days=800, n_replicates=3)
        a = run_study(config)
        b = run_study(config)
        assert len(a.records) == 6
        assert a == b

    def test_replicate_prefix_property(self):
        config2 = count_config(n_days=800, n_replicates=2)
        config3 = count_config(n_days=800, n_replicates=3)
        short = run_study(config2)
        long = run_study(config3)
        assert short.records == long.records[:4]

    def test_weights_annotated_under_contamination(self):
        config = count_config(n_days=1500, n_replicates=2,
                              contamination=Contamination(fraction=0.05))
        result = run_study(config)
        robust = [r for r in result.records if r.estimator == "robust"]
        assert all(r.n_contaminated > 0 for r in robust)
        assert all(r.mean_weight_contaminated < r.mean_weight_clean for r in robust)

    def test_failures_recorded_not_raised(self):
        # tiny replicates: some draw zero tail days, so extraction fails
        config = count_config(n_days=6, exceedance_prob=0.05, n_replicates=8)
        result = run_study(config)
        assert len(result.records) == 16
        failed = [r for r in result.records if r.error]
        assert failed and any("empty exceedance set" in r.error for r in failed)
        succeeded = [r for r in result.records if not r.error]
        assert succeeded  # the study carries on past failures


class TestBiasShrinks:
    def test_both_estimators_bias_nonincreasing(self):
        # clean data: |bias| at n_exc ~ 500 vs ~2000, within Monte-Carlo error
        stats = {}
        for n_days in (2500, 10_000):
            config = count_config(n_days=n_days, n_replicates=20, base_seed=909,
                                  exceedance_prob=0.2)
            summary = summarize(run_study(config))
            for estimator in ("ml", "robust"):
                coef = summary[estimator]["coefficients"]["sigma.intercept"]
                n_ok = summary[estimator]["n_converged"]
                se = coef["rmse"] / math.sqrt(max(n_ok, 1))
                stats[(estimator, n_days)] = (abs(coef["bias"]), se)
        for estimator in ("ml", "robust"):
            b_small, se_small = stats[(estimator, 2500)]
            b_large, se_large = stats[(estimator, 10_000)]
            assert b_large <= b_small + 2.0 * (se_small + se_large)


class TestSummarize:
    def _result(self, estimates, truth=1.0):
        config = ScenarioConfig(
            n_days=100, family="dgpd", threshold=5.0,
            beta_sigma=(truth,), beta_xi=(0.0,), n_replicates=len(estimates))
        records = []
        for i, est in enumerate(estimates):
            for estimator in ("ml", "robust"):
                records.append(ReplicateRecord(
                    replicate=i, estimator=estimator, converged=True, iterations=3,
                    c_used=math.inf, n_exceedances=10, n_contaminated=0,
                    coefficients={"sigma.intercept": est, "xi.intercept": 0.0},
                    mean_weight_contaminated=math.nan, mean_weight_clean=1.0))
        return StudyResult(config=config, records=tuple(records))

    def test_exact_estimate(self):
        summary = summarize(self._result([1.0]))
        stats = summary["ml"]["coefficients"]["sigma.intercept"]
        assert stats["bias"] == 0.0 and stats["rmse"] == 0.0

    def test_symmetric_errors(self):
        summary = summarize(self._result([1.25, 0.75]))
        stats = summary["ml"]["coefficients"]["sigma.intercept"]
        assert stats["bias"] == pytest.approx(0.0, abs=1e-15)
        assert stats["rmse"] == pytest.approx(0.25)
        assert stats["median_abs_error"] == pytest.approx(0.25)

    def test_recomputable_from_records(self):
        config = count_config(n_days=900, n_replicates=3)
        result = run_study(config)
        summary = summarize(result)
        truth = config.coefficient_truth()["sigma.intercept"]
        ests = [r.coefficients["sigma.intercept"] for r in result.records
                if r.estimator == "ml" and r.converged]
        assert summary["ml"]["coefficients"]["sigma.intercept"]["bias"] == pytest.approx(
            float(np.mean(np.array(ests) - truth)))
