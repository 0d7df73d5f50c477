"""Deterministic equivalents of spurious correlation and test loss for ridge
regression on block-Gaussian data, with Monte Carlo and random-features
checks."""

from .covmodel import (
    CovarianceModel,
    ModelDiagnostics,
    SyntheticFamilyParams,
    build_synthetic,
    psd_sqrt,
    random_block_model,
    schur_complement,
    validate,
)
from .detequiv import (
    DeterministicPoint,
    GroundTruth,
    TradeoffThresholds,
    c_bounds,
    c_sigma,
    c_sigma_schur,
    curve,
    evaluate,
    l_sigma,
    lambda_from_tau,
    ood_lower_bound,
    shape_ratio_condition,
    solve_tau,
    thresholds,
)
from .empirical import (
    Dataset,
    RidgeEstimate,
    TrialSummary,
    aggregate,
    gradient_flow_estimate,
    monte_carlo_spurious_cov,
    normalized_spurious_cov,
    ood_loss_empirical,
    redraw_noise,
    ridge_fit,
    sample_dataset,
    spurious_cov_exact,
    test_loss_exact,
    trial_sweep,
)
from .errors import (
    ConfigError,
    ConvergenceError,
    DegenerateDenominatorError,
    NotPositiveDefiniteError,
    ParameterRangeError,
    QuadratureError,
    SingularBlockError,
    SpurcorrError,
)
from .rfmodel import (
    Activation,
    HermiteStats,
    RFConfig,
    effective_lambda,
    equivalence_gap,
    hermite_coefficients,
    hermite_stats,
    rf_fit,
    rf_predict,
    rf_spurious_cov,
)

__version__ = "0.1.0"
