"""Point estimators for the average treatment effect.

``standardize`` implements the g-computation estimator: fit the working
logistic model, predict each subject's outcome under treatment and under
control, and average the difference of predictions.
``unadjusted_diff_means`` is the plain difference of arm means.
``fit_leave_one_out`` produces the n delete-one refits consumed by the
IF-LOO variance estimator.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DegenerateOutcomeError, EmptyArmError, NonConvergedError
from .glm import (
    FitConfig,
    GlmFit,
    ModelSpec,
    TrialDataset,
    _irls_batch,
    counterfactual_probabilities,
    expit,
    fit_logistic,
    separation_flags,
    _freeze,
)
from .variance import AteEstimate, Method, make_estimate


@dataclass(frozen=True)
class StandardizedResult:
    """Standardized ATE point estimate with the fit and predictions behind it.

    ``theta_hat`` equals ``mean(predictions_1 - predictions_0)`` by
    construction.
    """

    theta_hat: float
    fit: GlmFit
    predictions_1: np.ndarray
    predictions_0: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "predictions_1", _freeze(np.asarray(self.predictions_1, float)))
        object.__setattr__(self, "predictions_0", _freeze(np.asarray(self.predictions_0, float)))


@dataclass(frozen=True)
class LooFits:
    """The n leave-one-out working-model refits.

    Row i of ``beta`` was fit on the dataset with row i deleted. The
    ``mu1_own`` / ``mu0_own`` / ``mu_observed_own`` vectors hold each refit's
    prediction for its own held-out row under treatment, control, and the
    observed assignment. ``separation`` marks refits that ran to a separated
    boundary (usable predictions, flagged); ``failed`` marks refits with no
    usable solution at all.
    """

    beta: np.ndarray
    converged: np.ndarray
    separation: np.ndarray
    failed: np.ndarray
    iterations: np.ndarray
    mu1_own: np.ndarray
    mu0_own: np.ndarray
    mu_observed_own: np.ndarray

    def __post_init__(self):
        for name in ("beta", "converged", "separation", "failed", "iterations",
                     "mu1_own", "mu0_own", "mu_observed_own"):
            object.__setattr__(self, name, _freeze(np.asarray(getattr(self, name))))

    @property
    def n(self) -> int:
        return self.beta.shape[0]


def _check_outcome_informative(data: TrialDataset) -> None:
    """Raise if the outcome is constant within each arm (e.g. perfectly
    separated by treatment, or constant overall); no regression can say
    anything useful then."""
    y1 = data.outcome[data.treatment == 1.0]
    y0 = data.outcome[data.treatment == 0.0]
    if y1.min() == y1.max() and y0.min() == y0.max():
        raise DegenerateOutcomeError("outcome is constant within each treatment arm")


def standardize(
    data: TrialDataset,
    spec: ModelSpec,
    cfg: FitConfig = FitConfig(),
) -> StandardizedResult:
    """Standardized (g-computation) ATE estimate.

    theta_hat = (1/n) sum_i [mu_hat(1, X_i) - mu_hat(0, X_i)], with mu_hat the
    working logistic model fit on the full data by maximum likelihood.

    Raises RankDeficientError / DegenerateOutcomeError from the fit, and
    NonConvergedError if the IRLS budget is exhausted.
    """
    _check_outcome_informative(data)
    fit = fit_logistic(data, spec, cfg)
    if not fit.converged:
        raise NonConvergedError(
            f"working-model fit did not converge in {cfg.max_iterations} iterations"
        )
    mu1, mu0 = counterfactual_probabilities(fit, spec, data.covariates)
    theta = float(np.mean(mu1 - mu0))
    return StandardizedResult(theta_hat=theta, fit=fit, predictions_1=mu1, predictions_0=mu0)


def unadjusted_diff_means(data: TrialDataset, level: float = 0.95) -> AteEstimate:
    """Difference in arm means with the Bernoulli plug-in variance.

    point = ybar_1 - ybar_0; variance = p1(1-p1)/n1 + p0(1-p0)/n0.
    A zero variance (constant outcomes within arms) yields the degenerate
    point-mass interval, flagged in diagnostics.
    """
    treated = data.treatment == 1.0
    y1 = data.outcome[treated]
    y0 = data.outcome[~treated]
    if y1.size == 0 or y0.size == 0:
        raise EmptyArmError("both arms are required for the difference in means")
    p1, p0 = float(y1.mean()), float(y0.mean())
    point = p1 - p0
    variance = p1 * (1.0 - p1) / y1.size + p0 * (1.0 - p0) / y0.size
    return make_estimate(
        Method.UNADJUSTED,
        point,
        variance,
        level,
        diagnostics={
            "n_treated": int(y1.size),
            "n_control": int(y0.size),
            "degenerate_variance": variance == 0.0,
        },
    )


def fit_leave_one_out(
    data: TrialDataset,
    spec: ModelSpec,
    cfg: FitConfig = FitConfig(),
    warm_start: bool = False,
    full_fit: Optional[GlmFit] = None,
) -> LooFits:
    """Refit the working model n times, each time deleting one observation.

    Every refit is a full IRLS solve of the (n-1)-row problem, expressed as a
    row-weighted fit on the original design with a zero weight on the deleted
    row; all n solves run in one vectorized batch.

    Refits start from zero by default. Warm-starting from the full-data
    coefficients reaches the same solution whenever the refit has a unique
    maximizer, but when deleting a row makes the refit separable the
    likelihood is maximized on a whole set of boundary directions, and a
    start at the full-data fit selects the one that still classifies the
    held-out row correctly. That leaks the held-out observation into its own
    out-of-sample prediction and collapses the honest residual the
    leave-one-out variance relies on, so ``warm_start`` is off unless the
    caller knows the refits are well behaved.

    Refits that separate keep their boundary predictions and are only flagged;
    ``failed`` is reserved for refits without a usable solution
    (non-convergence or a numerically stuck solve).
    """
    n = data.n
    if n < 3:
        raise ValueError("leave-one-out requires at least three observations")
    X = spec.design_matrix(data.covariates, data.treatment)
    y = data.outcome
    if warm_start:
        if full_fit is None:
            full_fit = fit_logistic(data, spec, cfg)
        start = np.tile(full_fit.beta, (n, 1))
    else:
        start = np.zeros((n, X.shape[1]))

    mask = np.ones((n, n)) - np.eye(n)
    beta, converged, iterations, loglik = _irls_batch(X, y, mask, start, cfg)
    _, flagged = separation_flags(X, y, beta, mask, cfg, loglik=loglik)

    d1 = spec.design_matrix(data.covariates, np.ones(n))
    d0 = spec.design_matrix(data.covariates, np.zeros(n))
    mu1_own = expit(np.einsum("ij,ij->i", d1, beta))
    mu0_own = expit(np.einsum("ij,ij->i", d0, beta))
    mu_obs_own = np.where(data.treatment == 1.0, mu1_own, mu0_own)

    return LooFits(
        beta=beta,
        converged=converged,
        separation=flagged,
        failed=~converged,
        iterations=iterations,
        mu1_own=mu1_own,
        mu0_own=mu0_own,
        mu_observed_own=mu_obs_own,
    )
