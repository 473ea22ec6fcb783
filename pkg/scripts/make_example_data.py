#!/usr/bin/env python3
"""Regenerate the bundled synthetic example dataset and configs.

The repository ships three years of synthetic daily data so every CLI
command is demonstrable without the private hospital series. Rerunning
this script reproduces data/example_daily.csv byte for byte.
"""

import json
import os
import sys

import numpy as np

sys.path.insert(0, os.path.join(os.path.dirname(__file__), os.pardir, "src"))

from potcare.io import write_series_csv
from potcare.pot import DailySeries
from potcare.simulation import CovariateGenerator, ScenarioConfig, generate

ROOT = os.path.join(os.path.dirname(os.path.abspath(__file__)), os.pardir)


def main():
    config = ScenarioConfig(
        n_days=1096,
        family="dgpd",
        threshold=24.0,
        beta_sigma=(2.1, -0.06),
        beta_xi=(-0.5,),
        covariates=(
            CovariateGenerator("temp", mean=10.0, amplitude=9.0, phase=260.0,
                               noise_sd=2.5),
            CovariateGenerator("humidity", mean=70.0, amplitude=12.0, phase=80.0,
                               noise_sd=6.0),
        ),
        sigma_covariates=("temp",),
        exceedance_prob=0.2,
        base_seed=20170101,
    )
    sim = generate(config, 0)
    covs = dict(sim.series.covariates)
    # a few missing humidity readings so ingest reporting has work to do
    humidity = covs["humidity"].copy()
    humidity[[100, 477, 902]] = np.nan
    covs["humidity"] = humidity
    series = DailySeries(sim.series.dates, sim.series.visits, sim.series.positives,
                         sim.series.negatives, covs)
    data_path = os.path.join(ROOT, "data", "example_daily.csv")
    write_series_csv(series, data_path)
    print(f"wrote {data_path} ({len(series)} days, "
          f"{int(np.sum(sim.tail_mask))} tail days)")

    fit_counts = {
        "input": "data/example_daily.csv",
        "response": {"kind": "count", "column": "positives"},
        "threshold": {"quantile": 0.9},
        "model": {
            "sigma_terms": ["intercept", "temp"],
            "xi_terms": ["intercept"],
            "xi_bounds": [-0.5, 1.0],
        },
        "robust": {"c": "auto", "max_iter": 200, "n_restarts": 1},
        "rate_model": "logistic",
        "output": "out/counts",
        "seed": 1,
    }
    fit_odds = {
        "input": "data/example_daily.csv",
        "response": {"kind": "odds", "odds_correction": 0.5},
        "threshold": {"quantile": 0.9},
        "model": {
            "sigma_terms": ["intercept", "temp"],
            "xi_terms": ["intercept"],
            "xi_bounds": [0.0, 1.0],
        },
        "robust": {"c": "auto"},
        "rate_model": "logistic",
        "output": "out/odds",
        "seed": 1,
    }
    study = {
        "n_days": 2500,
        "family": "dgpd",
        "threshold": 20,
        "beta_sigma": [0.8, 0.3],
        "beta_xi": [-0.45],
        "covariates": [{"name": "temp", "mean": 0.0, "amplitude": 1.0,
                        "noise_sd": 0.3}],
        "sigma_covariates": ["temp"],
        "exceedance_prob": 0.2,
        "contamination": {"fraction": 0.05, "mechanism": "multiply",
                          "magnitude": 10.0},
        "n_replicates": 20,
        "base_seed": 7,
        "robust_c": "auto",
    }
    study_tiny = {
        "n_days": 600,
        "family": "dgpd",
        "threshold": 15,
        "beta_sigma": [0.8, 0.3],
        "beta_xi": [-0.45],
        "covariates": [{"name": "temp", "noise_sd": 0.3}],
        "sigma_covariates": ["temp"],
        "exceedance_prob": 0.25,
        "contamination": {"fraction": 0.05, "mechanism": "multiply",
                          "magnitude": 10.0},
        "n_replicates": 3,
        "base_seed": 11,
        "robust_c": "auto",
    }
    for name, obj in (("fit_counts.json", fit_counts), ("fit_odds.json", fit_odds),
                      ("study_small.json", study), ("study_tiny.json", study_tiny)):
        path = os.path.join(ROOT, "configs", name)
        with open(path, "w") as handle:
            json.dump(obj, handle, indent=2, sort_keys=True)
            handle.write("\n")
        print(f"wrote {path}")

    scenarios = os.path.join(ROOT, "configs", "scenarios.csv")
    with open(scenarios, "w") as handle:
        handle.write("label,temp,humidity\n")
        handle.write("cold_winter,-2.0,85.0\n")
        handle.write("mild,10.0,70.0\n")
        handle.write("warm_summer,22.0,55.0\n")
    print(f"wrote {scenarios}")


if __name__ == "__main__":
    main()
