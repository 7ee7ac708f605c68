"""Standardized (g-computation) ATE estimation for binary trial outcomes.

Point estimation by standardization with a logistic working model, plus four
variance estimators: the influence-function leave-one-out estimator (IF-LOO),
the influence-function plug-in, the nonparametric bootstrap, and the
Bernoulli plug-in of the unadjusted difference in means. A simulation harness
reproduces coverage and type-I-error experiments against a quadrature ground
truth.
"""

from .errors import (
    BootstrapDegenerateError,
    ConfigError,
    DegenerateOutcomeError,
    DimensionMismatchError,
    EmptyArmError,
    EstimationError,
    LooFailureError,
    NoIncludedReplicatesError,
    NonBinaryColumnError,
    NonConvergedError,
    ParseError,
    RankDeficientError,
)
from .estimators import (
    LooFits,
    StandardizedResult,
    fit_leave_one_out,
    standardize,
    unadjusted_diff_means,
)
from .glm import (
    FitConfig,
    GlmFit,
    ModelSpec,
    TrialDataset,
    counterfactual_probabilities,
    expit,
    fit_logistic,
    predict_prob,
)
from .simulation import (
    ReplicateResult,
    Scenario,
    SummaryRow,
    TrueAte,
    generate_dataset,
    load_scenario,
    run_replicate,
    run_scenario,
    summarize,
    true_ate_monte_carlo,
    true_ate_quadrature,
)
from .variance import (
    AteEstimate,
    InfluenceValues,
    Method,
    bootstrap_variance,
    if_loo_variance,
    if_plugin_variance,
    loo_influence,
    plugin_influence,
    wald_interval,
)

__version__ = "0.1.0"

__all__ = [
    "AteEstimate",
    "BootstrapDegenerateError",
    "ConfigError",
    "DegenerateOutcomeError",
    "DimensionMismatchError",
    "EmptyArmError",
    "EstimationError",
    "FitConfig",
    "GlmFit",
    "InfluenceValues",
    "LooFailureError",
    "LooFits",
    "Method",
    "ModelSpec",
    "NoIncludedReplicatesError",
    "NonBinaryColumnError",
    "NonConvergedError",
    "ParseError",
    "RankDeficientError",
    "ReplicateResult",
    "Scenario",
    "StandardizedResult",
    "SummaryRow",
    "TrialDataset",
    "TrueAte",
    "bootstrap_variance",
    "counterfactual_probabilities",
    "expit",
    "fit_leave_one_out",
    "fit_logistic",
    "generate_dataset",
    "if_loo_variance",
    "if_plugin_variance",
    "load_scenario",
    "loo_influence",
    "plugin_influence",
    "predict_prob",
    "run_replicate",
    "run_scenario",
    "standardize",
    "summarize",
    "true_ate_monte_carlo",
    "true_ate_quadrature",
    "unadjusted_diff_means",
    "wald_interval",
]
