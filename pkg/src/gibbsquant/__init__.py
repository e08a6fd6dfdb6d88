"""Gibbs-posterior inference for multivariate geometric quantiles."""

from .errors import (
    ConfigError,
    DegenerateDrawsError,
    GibbsQuantError,
    InsufficientDataError,
    SingularMatrixError,
    SingularityError,
)
from .losses import (
    LossSpec,
    as_dataset,
    asym_norm,
    count_skipped_rows,
    empirical_risk,
    empirical_risk_many,
    loss,
    loss_gradient,
    loss_hessian,
    risk_curvature,
    risk_gradient,
    sandwich_cov,
    score_covariance,
    uniform_weights,
    validate_weights,
)
from .solver import QuantileEstimate, SolverConfig, fit_quantile, fit_weighted_atoms
from .sampling import (
    GaussianPrior,
    McmcConfig,
    PosteriorDraws,
    default_prior,
    log_unnormalized_posterior,
    sample_posterior,
    save_draws,
)
from .ellipses import (
    CredibleEllipse,
    contains,
    ellipse_from_draws,
    ellipse_from_sandwich,
    ellipse_size,
    load_ellipse,
    mahalanobis_sq,
    save_ellipse,
)
from .calibration import (
    CalibrationConfig,
    CalibrationState,
    bootstrap_coverage,
    calibrate_learning_rate,
    plugin_learning_rate,
    save_trajectory,
)
from .baselines import (
    DPConfig,
    NIWConfig,
    NormalModelConfig,
    conjugate_normal_sample,
    dp_quantile_draw,
    dp_quantile_sample,
    niw_posterior_sample,
)
from .datagen import (
    GeneratorSpec,
    TruthRecord,
    example_generator,
    example_truth,
    sample,
    sample_gamma_copula,
    sample_mvlaplace,
    sample_mvnormal,
    save_dataset_csv,
    true_quantile,
)
from .dataio import apply_overrides, child_rng, child_seed, ingest_csv, read_config
from .experiments import (
    CoverageReport,
    ExperimentConfig,
    kde_grid,
    log_risk_differences,
    run_coverage_experiment,
    run_posterior_export,
    run_traintest_risk,
)

__version__ = "0.1.0"
