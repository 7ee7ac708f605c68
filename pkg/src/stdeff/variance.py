"""Variance estimators for the standardized ATE, and Wald inference.

Four estimators share the ``AteEstimate`` result shape: the influence-function
plug-in, the influence-function leave-one-out (IF-LOO) estimator, the
nonparametric bootstrap, and the Bernoulli plug-in of the unadjusted analysis
(produced in :mod:`stdeff.estimators`). Confidence intervals and p-values are
normal-based throughout; the known randomization probability pi0 enters the
influence formulas directly and is never replaced by the empirical arm
fraction.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import TYPE_CHECKING, Optional

import numpy as np
from scipy.special import ndtr, ndtri

from .errors import BootstrapDegenerateError, LooFailureError
from .glm import FitConfig, ModelSpec, TrialDataset, _freeze, _irls_batch, expit, separation_flags

if TYPE_CHECKING:  # pragma: no cover - import cycle guard, typing only
    from .estimators import LooFits, StandardizedResult


class Method(str, Enum):
    """Estimator identifiers, spelled the way the CLI accepts them."""

    IF_LOO = "if-loo"
    IF_PLUGIN = "if-plugin"
    BOOTSTRAP = "bootstrap"
    UNADJUSTED = "unadjusted"


@dataclass(frozen=True)
class AteEstimate:
    """Point estimate, variance, Wald interval and two-sided p-value."""

    method: Method
    point: float
    variance: float
    se: float
    ci_lower: float
    ci_upper: float
    p_value: float
    level: float = 0.95
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.variance < 0:
            raise ValueError("variance must be non-negative")
        if not (self.ci_lower <= self.point <= self.ci_upper):
            raise ValueError("confidence interval must bracket the point estimate")


@dataclass(frozen=True)
class InfluenceValues:
    """Evaluated influence-function contributions, one per observation."""

    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float).ravel()
        if not np.isfinite(vals).all():
            raise ValueError("influence values must be finite")
        object.__setattr__(self, "values", _freeze(vals))

    @property
    def n(self) -> int:
        return self.values.shape[0]


def wald_interval(point: float, variance: float, level: float = 0.95):
    """Normal-based interval and two-sided p-value for H0: theta = 0.

    Zero variance yields the degenerate interval [point, point] with p-value
    0 for a nonzero point and 1 otherwise.
    """
    if variance < 0:
        raise ValueError("variance must be non-negative")
    if not (0.0 < level < 1.0):
        raise ValueError("level must lie strictly inside (0, 1)")
    if variance == 0.0:
        return point, point, (1.0 if point == 0.0 else 0.0)
    se = float(np.sqrt(variance))
    z = float(ndtri(1.0 - (1.0 - level) / 2.0))
    p = float(2.0 * ndtr(-abs(point) / se))
    return point - z * se, point + z * se, p


def make_estimate(method: Method, point: float, variance: float, level: float,
                  diagnostics: Optional[dict] = None) -> AteEstimate:
    """Assemble an AteEstimate from (point, variance) via the Wald machinery."""
    lower, upper, p = wald_interval(point, variance, level)
    return AteEstimate(
        method=method,
        point=float(point),
        variance=float(variance),
        se=float(np.sqrt(variance)),
        ci_lower=float(lower),
        ci_upper=float(upper),
        p_value=p,
        level=float(level),
        diagnostics=diagnostics or {},
    )


def _inverse_probability_terms(data: TrialDataset) -> np.ndarray:
    return data.treatment / data.pi0 - (1.0 - data.treatment) / (1.0 - data.pi0)


def plugin_influence(data: TrialDataset, result: "StandardizedResult") -> InfluenceValues:
    """Influence contributions evaluated with the full-data fit."""
    mu_obs = np.where(data.treatment == 1.0, result.predictions_1, result.predictions_0)
    phi = (
        _inverse_probability_terms(data) * (data.outcome - mu_obs)
        + result.predictions_1
        - result.predictions_0
        - result.theta_hat
    )
    return InfluenceValues(phi)


def loo_influence(data: TrialDataset, result: "StandardizedResult", loo: "LooFits") -> InfluenceValues:
    """Influence contributions with each subject's own row predicted by the
    model that never saw it; centering stays at the full-data theta_hat."""
    phi = (
        _inverse_probability_terms(data) * (data.outcome - loo.mu_observed_own)
        + loo.mu1_own
        - loo.mu0_own
        - result.theta_hat
    )
    return InfluenceValues(phi)


def if_plugin_variance(data: TrialDataset, result: "StandardizedResult",
                       level: float = 0.95) -> AteEstimate:
    """Influence-function plug-in variance of the standardized estimator.

    sigma2 = V_hat / n with V_hat the mean squared influence contribution.
    """
    phi = plugin_influence(data, result).values
    variance = float(np.mean(phi * phi)) / data.n
    return make_estimate(
        Method.IF_PLUGIN,
        result.theta_hat,
        variance,
        level,
        diagnostics={"separation_detected": result.fit.separation_detected},
    )


def if_loo_variance(data: TrialDataset, result: "StandardizedResult", loo: "LooFits",
                    level: float = 0.95) -> AteEstimate:
    """Leave-one-out influence-function variance: sigma2 = (1/n^2) sum phi_{-i}^2.

    Raises LooFailureError if any refit failed, so the caller can exclude the
    dataset jointly across estimators instead of reporting a partial answer.
    """
    if loo.n != data.n:
        raise ValueError("leave-one-out fits do not match the dataset size")
    if loo.failed.any():
        bad = np.flatnonzero(loo.failed)
        raise LooFailureError(
            f"{bad.size} leave-one-out refit(s) failed (first at index {bad[0]})"
        )
    phi = loo_influence(data, result, loo).values
    variance = float(np.sum(phi * phi)) / data.n**2
    return make_estimate(
        Method.IF_LOO,
        result.theta_hat,
        variance,
        level,
        diagnostics={"n_separation_flagged": int(loo.separation.sum())},
    )


def bootstrap_variance(
    data: TrialDataset,
    spec: ModelSpec,
    cfg: FitConfig = FitConfig(),
    n_boot: int = 1000,
    seed: int = 0,
    level: float = 0.95,
    result: Optional["StandardizedResult"] = None,
) -> AteEstimate:
    """Nonparametric bootstrap variance of the standardized estimator.

    Resamples n rows with replacement ``n_boot`` times, refits the working
    model on each resample and recomputes the standardized estimate; the
    variance is the sample variance of the successful replicates. The point
    estimate stays the full-data one. The row-index stream is drawn
    sequentially from the seed up front, so execution order cannot change the
    result.

    Resamples whose outcome is constant within each resampled arm, or whose
    refit has no usable solution, are dropped and counted in diagnostics.
    Raises BootstrapDegenerateError when more than half fail.

    Refits start from zero rather than from the full-data coefficients: on a
    separable resample the likelihood is maximized on a set of boundary
    directions, and starting at the full-data fit would drag every such refit
    toward the same point, understating the resampling spread.
    """
    from .estimators import standardize  # local import; estimators depends on this module

    if n_boot < 2:
        raise ValueError("n_boot must be at least 2")
    if result is None:
        result = standardize(data, spec, cfg)

    n = data.n
    rng = np.random.Generator(np.random.Philox(key=int(seed) % 2**64))
    indices = rng.integers(0, n, size=(n_boot, n))
    counts = np.zeros((n_boot, n))
    for b in range(n_boot):
        counts[b] = np.bincount(indices[b], minlength=n)

    treated = data.treatment
    y = data.outcome
    arm1 = counts @ treated
    arm0 = n - arm1
    events1 = counts @ (treated * y)
    events0 = counts @ ((1.0 - treated) * y)
    const1 = (events1 == 0) | (events1 == arm1)
    const0 = (events0 == 0) | (events0 == arm0)
    degenerate = (arm1 == 0) | (arm0 == 0) | (const1 & const0)

    usable = ~degenerate
    weights = counts[usable].T
    X = spec.design_matrix(data.covariates, data.treatment)
    start = np.zeros((int(usable.sum()), X.shape[1]))
    beta, converged, _, loglik = _irls_batch(X, y, weights, start, cfg)
    _, flagged = separation_flags(X, y, beta, weights, cfg, loglik=loglik)

    n_failed = int(degenerate.sum() + (~converged).sum())
    if n_failed > 0.5 * n_boot or (n_boot - n_failed) < 2:
        raise BootstrapDegenerateError(
            f"{n_failed} of {n_boot} bootstrap resamples failed to fit"
        )

    ok = converged
    d1 = spec.design_matrix(data.covariates, np.ones(n))
    d0 = spec.design_matrix(data.covariates, np.zeros(n))
    contrast = expit(d1 @ beta[ok].T) - expit(d0 @ beta[ok].T)
    theta_b = (contrast * weights[:, ok]).sum(axis=0) / n
    variance = float(np.var(theta_b, ddof=1))

    return make_estimate(
        Method.BOOTSTRAP,
        result.theta_hat,
        variance,
        level,
        diagnostics={
            "n_boot": int(n_boot),
            "n_failed": n_failed,
            "n_separation_flagged": int(flagged[ok].sum()),
        },
    )
