"""Logistic working-model fitting.

The solver is Newton-Raphson / iteratively reweighted least squares on the
Bernoulli log-likelihood, with a step-halving guard so the likelihood never
decreases. A batched variant fits many row-weighted copies of the same design
matrix simultaneously; leave-one-out refits (0/1 deletion weights) and
bootstrap refits (resample multiplicity weights) are both expressed that way,
which keeps every refit on the exact same code path as the full-data fit.

Quasi-separated fits are handled the way R's ``glm`` handles them: fitted
probabilities are clamped to machine epsilon when evaluating the likelihood,
so a fit that classifies the data perfectly reaches a deviance plateau and is
reported as converged with ``separation_detected`` set, rather than erroring
out. Downstream code decides what to do with the flag.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
from scipy.special import expit as _expit

from .errors import (
    DegenerateOutcomeError,
    DimensionMismatchError,
    EmptyArmError,
    RankDeficientError,
)

# Floor on the IRLS weights mu*(1-mu); keeps the weighted normal equations
# solvable when probabilities saturate.
WEIGHT_FLOOR = 1e-10
# Any coefficient beyond this magnitude marks the fit as (quasi-)separated.
COEF_CAP = 15.0
# Relative tolerance for the pivoted-QR column rank test.
RANK_RTOL = 1e-10
# A residual deviance below this means every observation is classified to
# numerical precision; no healthy fit on noisy data gets anywhere near it.
PERFECT_FIT_DEVIANCE = 1e-3
# R-style relative flatness threshold on the deviance, the secondary
# convergence criterion that terminates boundary fits.
DEVIANCE_FLAT_RTOL = 1e-8

_PROB_EPS = float(np.finfo(float).eps)
_LL_SLACK = 1e-10
_MAX_HALVINGS = 30


def expit(z):
    """Logistic function 1 / (1 + exp(-z)), elementwise and overflow-safe.

    Saturates to the nearest representable double for large |z| instead of
    overflowing. Scalar input yields a float, array input an array.
    """
    out = _expit(np.asarray(z, dtype=float))
    if np.ndim(out) == 0:
        return float(out)
    return out


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class TrialDataset:
    """Observed tuples (X_i, A_i, Y_i) plus the known randomization probability.

    Parameters
    ----------
    covariates : (n, p) array of baseline covariate values, finite reals.
    treatment : length-n 0/1 treatment assignment.
    outcome : length-n 0/1 outcome.
    pi0 : randomization probability of assignment to treatment, strictly
        inside (0, 1). Taken as known and never estimated.
    """

    covariates: np.ndarray
    treatment: np.ndarray
    outcome: np.ndarray
    pi0: float

    def __post_init__(self):
        cov = np.atleast_2d(np.asarray(self.covariates, dtype=float))
        trt = np.asarray(self.treatment, dtype=float).ravel()
        out = np.asarray(self.outcome, dtype=float).ravel()
        n = cov.shape[0]
        if n < 2:
            raise ValueError("need at least two observations")
        if trt.shape[0] != n or out.shape[0] != n:
            raise DimensionMismatchError(
                f"covariates ({n} rows), treatment ({trt.shape[0]}) and "
                f"outcome ({out.shape[0]}) must have equal length"
            )
        if not np.isfinite(cov).all():
            raise ValueError("covariates must be finite")
        if not np.isin(trt, (0.0, 1.0)).all():
            raise ValueError("treatment must be coded 0/1")
        if not np.isin(out, (0.0, 1.0)).all():
            raise ValueError("outcome must be coded 0/1")
        if not (0.0 < float(self.pi0) < 1.0):
            raise ValueError("pi0 must lie strictly inside (0, 1)")
        if trt.max() != 1.0 or trt.min() != 0.0:
            raise EmptyArmError("both treatment arms must be present")
        object.__setattr__(self, "covariates", _freeze(cov))
        object.__setattr__(self, "treatment", _freeze(trt))
        object.__setattr__(self, "outcome", _freeze(out))
        object.__setattr__(self, "pi0", float(self.pi0))

    @property
    def n(self) -> int:
        return self.covariates.shape[0]

    @property
    def n_covariates(self) -> int:
        return self.covariates.shape[1]


@dataclass(frozen=True)
class ModelSpec:
    """Linear predictor layout for the working model.

    The intercept and the treatment main term are always included; the listed
    covariate columns enter as main terms, optionally also crossed with
    treatment. Coefficient order is (intercept, treatment, covariates,
    interactions).
    """

    covariate_columns: tuple = ()
    include_treatment_interactions: bool = False

    def __post_init__(self):
        cols = tuple(int(c) for c in self.covariate_columns)
        if len(set(cols)) != len(cols):
            raise ValueError("covariate_columns must be duplicate-free")
        if any(c < 0 for c in cols):
            raise ValueError("covariate_columns must be non-negative indices")
        object.__setattr__(self, "covariate_columns", cols)

    @classmethod
    def main_terms(cls, n_covariates: int) -> "ModelSpec":
        """Intercept + treatment + every covariate as a main term."""
        return cls(covariate_columns=tuple(range(n_covariates)))

    @property
    def n_params(self) -> int:
        per_cov = 2 if self.include_treatment_interactions else 1
        return 2 + per_cov * len(self.covariate_columns)

    def design_matrix(self, covariates: np.ndarray, treatment: np.ndarray) -> np.ndarray:
        """Build the (n, n_params) design matrix for given covariates/treatment."""
        covariates = np.atleast_2d(np.asarray(covariates, dtype=float))
        treatment = np.asarray(treatment, dtype=float).ravel()
        n = covariates.shape[0]
        if treatment.shape[0] != n:
            raise DimensionMismatchError("treatment length does not match covariate rows")
        if self.covariate_columns and max(self.covariate_columns) >= covariates.shape[1]:
            raise DimensionMismatchError(
                f"model uses covariate column {max(self.covariate_columns)} but "
                f"data has only {covariates.shape[1]} columns"
            )
        blocks = [np.ones((n, 1)), treatment[:, None]]
        if self.covariate_columns:
            x = covariates[:, list(self.covariate_columns)]
            blocks.append(x)
            if self.include_treatment_interactions:
                blocks.append(treatment[:, None] * x)
        return np.hstack(blocks)


@dataclass(frozen=True)
class FitConfig:
    """Iteration budget and tolerances for the IRLS solver."""

    max_iterations: int = 50
    coef_tolerance: float = 1e-8
    separation_probability_threshold: float = 1e-4

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")
        if not self.coef_tolerance > 0:
            raise ValueError("coef_tolerance must be positive")
        if not (0.0 < self.separation_probability_threshold < 0.5):
            raise ValueError("separation_probability_threshold must be in (0, 0.5)")


@dataclass(frozen=True)
class GlmFit:
    """Fitted working-model coefficients with convergence diagnostics."""

    beta: np.ndarray
    converged: bool
    iterations: int
    log_likelihood: float
    separation_detected: bool

    def __post_init__(self):
        object.__setattr__(self, "beta", _freeze(np.asarray(self.beta, dtype=float).ravel()))


def _clamped_loglik(y_is_one: np.ndarray, muc: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Weighted Bernoulli log-likelihood per fit from eps-clamped probabilities.

    ``y_is_one`` is the row mask of events; each row needs only one log branch.
    """
    contrib = np.negative(muc)
    np.log1p(contrib, out=contrib)
    contrib[y_is_one] = np.log(muc[y_is_one])
    return np.einsum("ij,ij->j", contrib, weights)


def _solve_newton_steps(hess: np.ndarray, grad: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.solve(hess, grad[:, :, None])[:, :, 0]
    except np.linalg.LinAlgError:
        steps = np.zeros_like(grad)
        for k in range(grad.shape[0]):
            try:
                steps[k] = np.linalg.solve(hess[k], grad[k])
            except np.linalg.LinAlgError:
                steps[k] = np.linalg.lstsq(hess[k], grad[k], rcond=None)[0]
        return steps


def _irls_batch(X, y, weights, start, cfg, ll_trace=None):
    """Fit one row-weighted logistic regression per column of ``weights``.

    Column j maximizes sum_i w_ij * loglik_i. Weights may be 0/1 deletion
    masks, resample multiplicities, or all ones for a plain fit. Convergence
    per fit: coefficient change below ``cfg.coef_tolerance``, or an R-style
    relative deviance plateau, or a residual deviance small enough to mean
    the fit classifies its data perfectly.

    Returns (beta, converged, iterations, loglik) with one row/entry per fit.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    weights = np.asarray(weights, dtype=float)
    n, p = X.shape
    m = weights.shape[1]
    beta = np.array(start, dtype=float)
    if beta.shape != (m, p):
        raise DimensionMismatchError(f"start must have shape {(m, p)}, got {beta.shape}")

    xxt = (X[:, :, None] * X[:, None, :]).reshape(n, p * p)
    y_col = y[:, None]
    y_is_one = y == 1.0
    supported = weights > 0

    def _clipped_probs(b):
        # probabilities for coefficient rows b, clamped at eps, built in place
        eta = X @ b.T
        _expit(eta, out=eta)
        np.clip(eta, _PROB_EPS, 1.0 - _PROB_EPS, out=eta)
        return eta

    converged = np.zeros(m, dtype=bool)
    iterations = np.full(m, cfg.max_iterations, dtype=int)
    muc_act = _clipped_probs(beta)  # carried across iterations; active columns
    loglik = _clamped_loglik(y_is_one, muc_act, weights)

    active = np.arange(m)
    for it in range(1, cfg.max_iterations + 1):
        if active.size == 0:
            break
        w_act = weights[:, active]
        b_act = beta[active]
        ll_act = loglik[active]

        # irls_w = max(muc (1 - muc), floor) * w, fused in place
        irls_w = np.subtract(1.0, muc_act)
        irls_w *= muc_act
        np.maximum(irls_w, WEIGHT_FLOOR, out=irls_w)
        irls_w *= w_act
        resid = np.subtract(y_col, muc_act)
        resid *= w_act
        grad = resid.T @ X
        hess = (irls_w.T @ xxt).reshape(active.size, p, p)
        steps = _solve_newton_steps(hess, grad)

        cand = b_act + steps
        muc_cand = _clipped_probs(cand)
        ll_new = _clamped_loglik(y_is_one, muc_cand, w_act)
        scale = np.ones(active.size)
        for _ in range(_MAX_HALVINGS):
            worse = ~(ll_new >= ll_act - _LL_SLACK)
            if not worse.any():
                break
            scale[worse] *= 0.5
            cand[worse] = b_act[worse] + scale[worse, None] * steps[worse]
            muc_cand[:, worse] = _clipped_probs(cand[worse])
            ll_new[worse] = _clamped_loglik(y_is_one, muc_cand[:, worse], w_act[:, worse])
        stuck = ~(ll_new >= ll_act - _LL_SLACK)
        if stuck.any():
            # No usable ascent direction; keep the previous iterate and give up
            # on these fits rather than reporting a false convergence.
            cand[stuck] = b_act[stuck]
            muc_cand[:, stuck] = _clipped_probs(cand[stuck])
            ll_new[stuck] = ll_act[stuck]

        delta = np.abs(cand - b_act).max(axis=1)
        # The deviance-based stops only apply to fits already at the boundary
        # (some IRLS weight at the floor, i.e. probabilities saturated); an
        # interior fit must meet the coefficient criterion, which leaves it at
        # the maximizer to machine precision.
        floored = np.subtract(1.0, muc_cand)
        floored *= muc_cand
        at_boundary = ((floored <= WEIGHT_FLOOR) & supported[:, active]).any(axis=0)
        dev_change = 2.0 * np.abs(ll_new - ll_act)
        flat = dev_change < DEVIANCE_FLAT_RTOL * (0.1 + 2.0 * np.abs(ll_new))
        perfect = -2.0 * ll_new < PERFECT_FIT_DEVIANCE
        done = ((delta < cfg.coef_tolerance) | (at_boundary & (flat | perfect))) & ~stuck

        beta[active] = cand
        loglik[active] = ll_new
        if ll_trace is not None:
            snapshot = np.full(m, np.nan)
            snapshot[active] = ll_new
            ll_trace.append(snapshot)

        newly = active[done]
        converged[newly] = True
        iterations[newly] = it
        keep = ~done & ~stuck
        active = active[keep]
        muc_act = muc_cand[:, keep]

    return beta, converged, iterations, loglik


def _check_full_rank(X: np.ndarray) -> None:
    r = scipy.linalg.qr(X, mode="r", pivoting=True)[0]
    diag = np.abs(np.diag(r))
    if diag.size < X.shape[1] or diag.min() <= RANK_RTOL * diag.max():
        raise RankDeficientError(
            f"design matrix with {X.shape[1]} columns is rank deficient"
        )


def separation_flags(X, y, beta, weights, cfg, loglik=None) -> tuple:
    """(complete, flagged) separation indicators for each fitted coefficient row.

    ``complete``: every supported observation (weight > 0) has a fitted
    probability outside [eps, 1 - eps], or the fit terminated on the
    perfect-fit deviance plateau (pass ``loglik`` to include that signal);
    either way the fitted rule classifies its data perfectly. ``flagged``:
    that, or any coefficient beyond the magnitude cap.
    """
    beta = np.atleast_2d(beta)
    mu = expit(X @ beta.T)
    eps = cfg.separation_probability_threshold
    extreme = (mu <= eps) | (mu >= 1.0 - eps)
    supported = np.asarray(weights, dtype=float) > 0
    complete = (extreme | ~supported).all(axis=0)
    if loglik is not None:
        complete |= -2.0 * np.asarray(loglik, dtype=float) < PERFECT_FIT_DEVIANCE
    complete &= supported.any(axis=0)
    flagged = complete | (np.abs(beta).max(axis=1) > COEF_CAP)
    return complete, flagged


def fit_logistic(data: TrialDataset, spec: ModelSpec, cfg: FitConfig = FitConfig()) -> GlmFit:
    """Fit the working logistic model by maximum likelihood (IRLS).

    Raises
    ------
    RankDeficientError
        if the design matrix is not of full column rank.
    DegenerateOutcomeError
        if all outcomes are identical, leaving the intercept unbounded.
    """
    X = spec.design_matrix(data.covariates, data.treatment)
    y = data.outcome
    if y.min() == y.max():
        raise DegenerateOutcomeError("all outcomes are identical")
    _check_full_rank(X)
    ones = np.ones((len(y), 1))
    beta, conv, iters, ll = _irls_batch(X, y, ones, np.zeros((1, X.shape[1])), cfg)
    _, flagged = separation_flags(X, y, beta, ones, cfg, loglik=ll)
    return GlmFit(
        beta=beta[0],
        converged=bool(conv[0]),
        iterations=int(iters[0]),
        log_likelihood=float(ll[0]),
        separation_detected=bool(flagged[0]),
    )


def predict_prob(fit: GlmFit, spec: ModelSpec, a: int, x) -> float:
    """Predicted outcome probability mu_hat(a, x) = expit(m_betahat(a, x))."""
    if a not in (0, 1):
        raise ValueError("treatment value must be 0 or 1")
    x = np.asarray(x, dtype=float).ravel()
    row = spec.design_matrix(x[None, :], np.array([float(a)]))
    if row.shape[1] != fit.beta.shape[0]:
        raise DimensionMismatchError(
            f"fit has {fit.beta.shape[0]} coefficients but the model spec "
            f"produces {row.shape[1]} design columns"
        )
    return float(expit(row @ fit.beta)[0])


def counterfactual_probabilities(fit: GlmFit, spec: ModelSpec, covariates: np.ndarray):
    """(mu_hat(1, X_i), mu_hat(0, X_i)) for every covariate row."""
    covariates = np.atleast_2d(np.asarray(covariates, dtype=float))
    n = covariates.shape[0]
    d1 = spec.design_matrix(covariates, np.ones(n))
    d0 = spec.design_matrix(covariates, np.zeros(n))
    if d1.shape[1] != fit.beta.shape[0]:
        raise DimensionMismatchError("model spec does not match the fitted coefficients")
    return expit(d1 @ fit.beta), expit(d0 @ fit.beta)
