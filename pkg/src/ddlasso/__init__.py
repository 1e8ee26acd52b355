"""Doubly debiased Lasso: inference for single coefficients of
high-dimensional linear models under dense hidden confounding."""

from .bench import (
    GridCell,
    MonteCarloReport,
    ReplicationRecord,
    jaccard_topk,
    run_grid,
    run_replication,
    scaled_bias_terms,
)
from .ddl import (
    CvTuning,
    DdlConfig,
    DdlResult,
    TheoryTuning,
    are,
    confidence_interval,
    debiased_lasso_baseline,
    fit,
    fit_detailed,
    initial_estimator,
    noise_level,
    normal_quantile,
    point_estimate,
    projection_direction,
    variance_estimate,
)
from .lasso import (
    LassoFit,
    LassoProblem,
    cv_lambda,
    inflate_lambda_for_variance,
    lambda_grid,
    prox_grad_reference,
    solve,
)
from .simgen import (
    Dataset,
    GroundTruth,
    Scenario,
    make_covariance,
    make_loadings,
    sample_dataset,
    standardized_sampler,
    true_perturbation,
)
from .spectral import (
    P1Diagnostics,
    SpectralTransform,
    SvdFactors,
    check_p1,
    identity_transform,
    pca_adjust,
    singular_spectrum,
    svd_thin,
    trim_transform,
)

__version__ = "0.1.0"
