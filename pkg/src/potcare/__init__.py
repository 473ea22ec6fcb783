"""Robust peaks-over-threshold distributional regression and CaRe estimation."""

from .care import (
    CareEstimate,
    CongestionEstimate,
    ExceedanceRateFit,
    care,
    care_curve,
    congestion_probability,
    fit_exceedance_rate,
    rate_at,
)
from .design import (
    DesignMatrices,
    Intercept,
    Linear,
    ModelSpec,
    Spline,
    bspline_basis,
    build_design,
    link_sigma,
    link_sigma_inv,
    link_xi,
    link_xi_inv,
    predict_params,
)
from .distributions import (
    DEFAULT_XI_BOUNDS,
    GpdParams,
    LogDensityGradient,
    SupportError,
    dgpd_cdf,
    dgpd_log_mass_gradient,
    dgpd_logpmf,
    dgpd_pmf,
    dgpd_quantile,
    dgpd_sample,
    gpd_cdf,
    gpd_log_density_gradient,
    gpd_logpdf,
    gpd_quantile,
    gpd_sample,
    gpd_survival,
)
from .pot import (
    DailySeries,
    EmptyExceedanceError,
    ExceedanceSet,
    choose_threshold_by_quantile,
    extract_exceedances,
    mean_residual_life,
    odds_series,
    threshold_stability,
)
from .robust import (
    FitResult,
    RobustConfig,
    calibrate_tuning_constant,
    consistency_correction,
    fit,
    rho,
    rho_weight,
    robust_gradient,
    robust_objective,
    sandwich_covariance,
)
from .simulation import (
    Contamination,
    CovariateGenerator,
    ScenarioConfig,
    StudyResult,
    contaminate,
    generate,
    run_study,
    summarize,
)

__version__ = "0.1.0"
