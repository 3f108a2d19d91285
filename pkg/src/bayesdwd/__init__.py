"""Bayesian distance-weighted discrimination.

A linear classifier treated as a Bayesian model: the penalized DWD loss
defines an unnormalized posterior whose mode is the classical fit, whose
exact shape is sampled by an adaptive Metropolis-in-Gibbs chain, and whose
curvature yields a closed-form Gaussian approximation.  The package adds
penalty inference through a Monte-Carlo-estimated normalizer, a
semi-supervised likelihood for partially labeled data, simulation
scenarios with oracles and calibration metrics, and a batch CLI.
"""

from .core import (
    Dataset,
    ModelState,
    Scores,
    dwd_loss,
    dwd_loss_grad,
    objective,
    objective_grad,
    scores,
    solve_mode,
)
from .errors import (
    BayesDwdError,
    ConfigError,
    ConvergenceError,
    DataFormatError,
    NumericalError,
    ResourceBudgetError,
)
from .laplace import (
    BootstrapResult,
    IntervalTable,
    LaplaceApprox,
    bootstrap_intervals,
    laplace_curvature,
    laplace_fit,
    laplace_intervals,
)
from .model import (
    LambdaPrior,
    PhiTable,
    class_probability,
    estimate_phi_table,
    log_lambda_conditional,
    log_phi_interp,
    log_posterior,
    log_prior_beta,
    prior_score_term,
)
from .sampler import (
    ChainSummary,
    PosteriorDraws,
    SamplerConfig,
    potential_scale_reduction,
    predict_label,
    predict_proba,
    run_chain,
    sample_prior_beta,
    summarize,
)
from .simlab import (
    CalibrationTable,
    MethodConfig,
    OracleModel,
    RepRecord,
    ScenarioSpec,
    SimReport,
    calibration_bins,
    gen_assumed,
    gen_gaussian,
    gen_semisup,
    metric_coverage,
    metric_kl,
    metric_mse,
    misclassification,
    oracle_probability,
    run_scenario,
)

__version__ = "0.1.0"

__all__ = [
    "BayesDwdError",
    "BootstrapResult",
    "CalibrationTable",
    "ChainSummary",
    "ConfigError",
    "ConvergenceError",
    "DataFormatError",
    "Dataset",
    "IntervalTable",
    "LambdaPrior",
    "LaplaceApprox",
    "MethodConfig",
    "ModelState",
    "NumericalError",
    "OracleModel",
    "PhiTable",
    "PosteriorDraws",
    "RepRecord",
    "ResourceBudgetError",
    "SamplerConfig",
    "ScenarioSpec",
    "Scores",
    "SimReport",
    "__version__",
    "bootstrap_intervals",
    "calibration_bins",
    "class_probability",
    "dwd_loss",
    "dwd_loss_grad",
    "estimate_phi_table",
    "gen_assumed",
    "gen_gaussian",
    "gen_semisup",
    "laplace_curvature",
    "laplace_fit",
    "laplace_intervals",
    "log_lambda_conditional",
    "log_phi_interp",
    "log_posterior",
    "log_prior_beta",
    "metric_coverage",
    "metric_kl",
    "metric_mse",
    "misclassification",
    "objective",
    "objective_grad",
    "oracle_probability",
    "potential_scale_reduction",
    "predict_label",
    "predict_proba",
    "prior_score_term",
    "run_chain",
    "run_scenario",
    "sample_prior_beta",
    "scores",
    "solve_mode",
    "summarize",
]
