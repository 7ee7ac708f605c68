"""Simulation harness: data generation, ground truth, and replicated runs.

The data-generating process has a fixed shape: four independent Uniform(0,1)
covariates, two independent Bernoulli(1/2) covariates, a Bernoulli(pi0)
treatment flip, and a binary outcome whose log odds is linear in treatment
and all six covariates. A scenario pins the coefficients, sample size,
replication counts, and the base seed.

The true marginal risk difference is not a coefficient of that process, so it
is computed by tensor-product Gauss-Legendre quadrature over the continuous
covariates crossed with exact enumeration of the binary ones, with an
optional plain Monte Carlo cross-check.

Every replicate's randomness is keyed by (base_seed, replicate_index) through
a counter-based generator, so replicates are reproducible in isolation and
results are independent of execution order or worker count.
"""

from __future__ import annotations

import configparser
import csv
import itertools
import os
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError, EstimationError, NoIncludedReplicatesError
from .estimators import fit_leave_one_out, standardize, unadjusted_diff_means
from .glm import FitConfig, ModelSpec, TrialDataset, expit
from .variance import (
    AteEstimate,
    Method,
    bootstrap_variance,
    if_loo_variance,
    if_plugin_variance,
)

N_CONTINUOUS = 4
N_BINARY = 2

METHOD_ORDER = (Method.IF_LOO, Method.IF_PLUGIN, Method.BOOTSTRAP, Method.UNADJUSTED)


@dataclass(frozen=True)
class Scenario:
    """Full parameterization of one simulated trial design."""

    n: int
    beta0: float
    beta_a: float
    beta_x: tuple
    pi0: float = 0.5
    n_replicates: int = 2000
    n_boot: int = 500
    base_seed: int = 0
    label: str = ""
    expected_ate: Optional[float] = None
    expected_placebo_rate: Optional[float] = None

    def __post_init__(self):
        bx = tuple(float(b) for b in self.beta_x)
        if len(bx) != N_CONTINUOUS + N_BINARY:
            raise ValueError(
                f"beta_x must have {N_CONTINUOUS + N_BINARY} entries "
                f"(got {len(bx)}); the DGP has 4 continuous and 2 binary covariates"
            )
        object.__setattr__(self, "beta_x", bx)
        if self.n < 2:
            raise ValueError("n must be at least 2")
        if not (0.0 < self.pi0 < 1.0):
            raise ValueError("pi0 must lie strictly inside (0, 1)")
        if self.n_replicates < 1:
            raise ValueError("n_replicates must be positive")
        if self.n_boot < 0:
            raise ValueError("n_boot must be non-negative")


@dataclass(frozen=True)
class TrueAte:
    """Ground-truth marginal risk difference for a scenario's DGP."""

    value: float
    quadrature_nodes_per_dim: int
    control_rate: float
    mc_check: Optional[tuple] = None  # (estimate, standard error)

    def __post_init__(self):
        if abs(self.value) > 1.0:
            raise ValueError("a risk difference cannot exceed 1 in magnitude")
        if self.mc_check is not None:
            est, se = self.mc_check
            if abs(est - self.value) > 3.0 * se:
                raise ValueError(
                    f"Monte Carlo cross-check {est:.6f} (se {se:.2e}) disagrees "
                    f"with quadrature {self.value:.6f} by more than 3 standard errors"
                )


@dataclass(frozen=True)
class ReplicateResult:
    """Per-method estimates for one replicate, or the joint-exclusion record."""

    replicate_index: int
    excluded: bool
    reason: str = ""
    estimates: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.excluded and self.estimates:
            raise ValueError("an excluded replicate must not carry estimates")


@dataclass(frozen=True)
class SummaryRow:
    """Per-(scenario, method) summary metrics.

    ``se_empirical`` is the standard deviation of the point estimates over
    included replicates; ``est_sd`` the mean of the estimated standard errors
    (``est_sd_rms`` the root mean of the estimated variances); ``type1_pct``
    the rejection rate of H0: theta = 0 at the summary's alpha, which is the
    type-I error when the scenario's true effect is zero.
    """

    method: str
    se_empirical: float
    est_sd: float
    est_sd_rms: float
    coverage_pct: float
    type1_pct: float
    n_included: int
    n_excluded: int


def _replicate_rng(base_seed: int, replicate_index: int) -> np.random.Generator:
    key = np.array([base_seed % 2**64, replicate_index % 2**64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def _bootstrap_seed(base_seed: int, replicate_index: int) -> int:
    ss = np.random.SeedSequence(entropy=[base_seed % 2**64, replicate_index % 2**64, 0xB0075EED])
    return int(ss.generate_state(1, np.uint64)[0])


def generate_dataset(scenario: Scenario, replicate_index: int) -> TrialDataset:
    """Draw one dataset from the scenario's DGP.

    The draw order is fixed (continuous covariates, binary covariates,
    treatment, outcome) and the generator is keyed by
    (base_seed, replicate_index), so the same pair always yields a bitwise
    identical dataset.
    """
    rng = _replicate_rng(scenario.base_seed, replicate_index)
    n = scenario.n
    x_cont = rng.random((n, N_CONTINUOUS))
    x_bin = (rng.random((n, N_BINARY)) < 0.5).astype(float)
    covariates = np.hstack([x_cont, x_bin])
    treatment = (rng.random(n) < scenario.pi0).astype(float)
    lin = scenario.beta0 + scenario.beta_a * treatment + covariates @ np.asarray(scenario.beta_x)
    outcome = (rng.random(n) < expit(lin)).astype(float)
    return TrialDataset(covariates=covariates, treatment=treatment, outcome=outcome, pi0=scenario.pi0)


def _gauss_legendre_unit(nodes_per_dim: int):
    """Tensor-product Gauss-Legendre nodes/weights on the unit hypercube [0,1]^4."""
    x, w = np.polynomial.legendre.leggauss(nodes_per_dim)
    x01 = 0.5 * (x + 1.0)
    w01 = 0.5 * w
    grids = np.meshgrid(*([x01] * N_CONTINUOUS), indexing="ij")
    points = np.stack([g.ravel() for g in grids], axis=1)
    wgrids = np.meshgrid(*([w01] * N_CONTINUOUS), indexing="ij")
    weights = np.prod(np.stack([g.ravel() for g in wgrids], axis=1), axis=1)
    return points, weights


def _marginal_rate(beta0, beta_a, beta_x, a, points, weights) -> float:
    beta_x = np.asarray(beta_x, dtype=float)
    base = beta0 + beta_a * a + points @ beta_x[:N_CONTINUOUS]
    total = 0.0
    for cell in itertools.product((0.0, 1.0), repeat=N_BINARY):
        lin = base + float(np.dot(cell, beta_x[N_CONTINUOUS:]))
        total += 2.0**-N_BINARY * float(np.sum(weights * expit(lin)))
    return total


def true_ate_quadrature(beta0: float, beta_a: float, beta_x: Sequence[float],
                        nodes_per_dim: int = 16) -> TrueAte:
    """Ground-truth ATE E_X[expit(b0 + bA + bX'X) - expit(b0 + bX'X)].

    Integrates the continuous covariates by tensor-product Gauss-Legendre
    quadrature on [0,1]^4 and enumerates the four binary-covariate cells
    exactly (weight 1/4 each). Also reports the control marginal event rate.
    """
    if nodes_per_dim < 8:
        raise ValueError("nodes_per_dim below 8 is too coarse for these integrands")
    points, weights = _gauss_legendre_unit(nodes_per_dim)
    rate1 = _marginal_rate(beta0, beta_a, beta_x, 1.0, points, weights)
    rate0 = _marginal_rate(beta0, beta_a, beta_x, 0.0, points, weights)
    return TrueAte(
        value=rate1 - rate0,
        quadrature_nodes_per_dim=nodes_per_dim,
        control_rate=rate0,
    )


def true_ate_monte_carlo(beta0: float, beta_a: float, beta_x: Sequence[float],
                         n_draws: int = 10**6, seed: int = 0,
                         chunk: int = 10**6):
    """Plain Monte Carlo estimate of the ATE with its standard error."""
    beta_x = np.asarray(beta_x, dtype=float)
    rng = np.random.Generator(np.random.Philox(key=seed % 2**64))
    total = 0.0
    total_sq = 0.0
    done = 0
    while done < n_draws:
        m = min(chunk, n_draws - done)
        xc = rng.random((m, N_CONTINUOUS))
        xb = (rng.random((m, N_BINARY)) < 0.5).astype(float)
        lin0 = beta0 + xc @ beta_x[:N_CONTINUOUS] + xb @ beta_x[N_CONTINUOUS:]
        diff = expit(lin0 + beta_a) - expit(lin0)
        total += float(diff.sum())
        total_sq += float((diff * diff).sum())
        done += m
    mean = total / n_draws
    var = max(total_sq / n_draws - mean * mean, 0.0)
    return mean, float(np.sqrt(var / n_draws))


def true_ate_for_scenario(scenario: Scenario, nodes_per_dim: int = 16,
                          mc_draws: int = 0, mc_seed: int = 20260811) -> TrueAte:
    """Quadrature ground truth for a scenario, optionally MC cross-checked."""
    ate = true_ate_quadrature(scenario.beta0, scenario.beta_a, scenario.beta_x, nodes_per_dim)
    if mc_draws > 0:
        mc = true_ate_monte_carlo(scenario.beta0, scenario.beta_a, scenario.beta_x,
                                  n_draws=mc_draws, seed=mc_seed)
        ate = replace(ate, mc_check=mc)
    return ate


def validate_scenario_truth(scenario: Scenario, ate: TrueAte) -> None:
    """Check the scenario's declared ATE/placebo labels against quadrature.

    Raises ConfigError when the configured labels contradict the computed
    ground truth (ATE off by more than 1e-3, or control rate off by more
    than 0.01).
    """
    if scenario.expected_ate is not None and abs(ate.value - scenario.expected_ate) > 1e-3:
        raise ConfigError(
            "scenario.expected_ate",
            f"quadrature ATE {ate.value:.6f} contradicts the declared {scenario.expected_ate:.6f}",
        )
    if (scenario.expected_placebo_rate is not None
            and abs(ate.control_rate - scenario.expected_placebo_rate) > 0.01):
        raise ConfigError(
            "scenario.expected_placebo_rate",
            f"quadrature control rate {ate.control_rate:.6f} contradicts "
            f"the declared {scenario.expected_placebo_rate:.6f}",
        )


def run_replicate(scenario: Scenario, replicate_index: int,
                  spec: Optional[ModelSpec] = None,
                  cfg: FitConfig = FitConfig()) -> ReplicateResult:
    """Generate one dataset and apply every estimator to it.

    Any estimation failure (degenerate outcome, non-convergence, failed
    leave-one-out refit, degenerate bootstrap) excludes the replicate jointly
    across all estimators, so no method gains by skipping hard replicates.
    """
    if spec is None:
        spec = ModelSpec.main_terms(N_CONTINUOUS + N_BINARY)
    try:
        data = generate_dataset(scenario, replicate_index)
        estimates = {Method.UNADJUSTED: unadjusted_diff_means(data)}
        result = standardize(data, spec, cfg)
        estimates[Method.IF_PLUGIN] = if_plugin_variance(data, result)
        loo = fit_leave_one_out(data, spec, cfg)
        estimates[Method.IF_LOO] = if_loo_variance(data, result, loo)
        if scenario.n_boot >= 2:
            estimates[Method.BOOTSTRAP] = bootstrap_variance(
                data, spec, cfg,
                n_boot=scenario.n_boot,
                seed=_bootstrap_seed(scenario.base_seed, replicate_index),
                result=result,
            )
    except EstimationError as err:
        return ReplicateResult(replicate_index=replicate_index, excluded=True,
                               reason=err.code)
    return ReplicateResult(replicate_index=replicate_index, excluded=False,
                           estimates=estimates)


def _replicate_task(args) -> ReplicateResult:
    scenario, index = args
    return run_replicate(scenario, index)


def run_scenario(scenario: Scenario, threads: int = 1) -> list:
    """Run all replicates, optionally across worker processes.

    Replicates are pure functions of (base_seed, replicate_index), and results
    are assembled in index order, so the output is identical for any worker
    count.
    """
    indices = range(scenario.n_replicates)
    if threads <= 1:
        return [run_replicate(scenario, i) for i in indices]
    tasks = [(scenario, i) for i in indices]
    chunksize = max(1, scenario.n_replicates // (threads * 8))
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(_replicate_task, tasks, chunksize=chunksize))


def summarize(results: Sequence[ReplicateResult], true_ate, alpha: float = 0.05) -> list:
    """Aggregate replicate results into one SummaryRow per method."""
    truth = float(getattr(true_ate, "value", true_ate))
    # canonical replicate order makes the aggregation arithmetic, and hence
    # the output, exactly independent of the input ordering
    ordered = sorted(results, key=lambda r: r.replicate_index)
    included = [r for r in ordered if not r.excluded]
    n_excluded = len(ordered) - len(included)
    if not included:
        raise NoIncludedReplicatesError("every replicate was excluded")

    rows = []
    for method in METHOD_ORDER:
        ests = [r.estimates[method] for r in included if method in r.estimates]
        if not ests:
            continue
        points = np.array([e.point for e in ests])
        ses = np.array([e.se for e in ests])
        covered = np.array([e.ci_lower <= truth <= e.ci_upper for e in ests])
        rejected = np.array([e.p_value < alpha for e in ests])
        rows.append(SummaryRow(
            method=method.value,
            se_empirical=float(points.std(ddof=1)) if points.size > 1 else 0.0,
            est_sd=float(ses.mean()),
            est_sd_rms=float(np.sqrt(np.mean(ses**2))),
            coverage_pct=100.0 * float(covered.mean()),
            type1_pct=100.0 * float(rejected.mean()),
            n_included=len(ests),
            n_excluded=n_excluded,
        ))
    return rows


# ---------------------------------------------------------------------------
# Scenario files and CSV output
# ---------------------------------------------------------------------------

_REQUIRED_KEYS = ("n", "beta0", "beta_a", "beta_x", "pi0", "n_replicates",
                  "n_boot", "base_seed")


def load_scenario(path) -> Scenario:
    """Parse a scenario .cfg file ([scenario] section, key = value pairs)."""
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read(path)
    except configparser.Error as err:
        raise ConfigError("scenario", f"unparseable file: {err}") from err
    if not parser.has_section("scenario"):
        raise ConfigError("scenario", "missing [scenario] section")
    sec = parser["scenario"]
    for key in _REQUIRED_KEYS:
        if key not in sec:
            raise ConfigError(f"scenario.{key}", "missing required key")

    def _number(key, conv):
        try:
            return conv(sec[key])
        except ValueError as err:
            raise ConfigError(f"scenario.{key}", f"not a valid number: {sec[key]!r}") from err

    beta_x_raw = [tok for tok in re.split(r"[,\s]+", sec["beta_x"].strip()) if tok]
    try:
        beta_x = tuple(float(tok) for tok in beta_x_raw)
    except ValueError as err:
        raise ConfigError("scenario.beta_x", f"not a list of numbers: {sec['beta_x']!r}") from err

    kwargs = dict(
        n=_number("n", int),
        beta0=_number("beta0", float),
        beta_a=_number("beta_a", float),
        beta_x=beta_x,
        pi0=_number("pi0", float),
        n_replicates=_number("n_replicates", int),
        n_boot=_number("n_boot", int),
        base_seed=_number("base_seed", int),
        label=sec.get("label", os.path.splitext(os.path.basename(path))[0]),
    )
    if "expected_ate" in sec:
        kwargs["expected_ate"] = _number("expected_ate", float)
    if "expected_placebo_rate" in sec:
        kwargs["expected_placebo_rate"] = _number("expected_placebo_rate", float)
    try:
        return Scenario(**kwargs)
    except ValueError as err:
        raise ConfigError("scenario", str(err)) from err


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


SUMMARY_COLUMNS = ("scenario", "method", "n_replicates", "n_included", "n_excluded",
                   "true_ate", "alpha", "se_empirical", "est_sd", "est_sd_rms",
                   "coverage_pct", "type1_pct")


def write_summary_csv(fileobj, scenario: Scenario, true_ate, rows, alpha: float = 0.05) -> None:
    truth = float(getattr(true_ate, "value", true_ate))
    writer = csv.writer(fileobj, lineterminator="\n")
    writer.writerow(SUMMARY_COLUMNS)
    for row in rows:
        writer.writerow([
            scenario.label, row.method, scenario.n_replicates, row.n_included,
            row.n_excluded, _fmt(truth), _fmt(alpha), _fmt(row.se_empirical),
            _fmt(row.est_sd), _fmt(row.est_sd_rms), _fmt(row.coverage_pct),
            _fmt(row.type1_pct),
        ])


REPLICATE_COLUMNS = ("replicate", "excluded", "reason", "method", "point",
                     "variance", "se", "ci_lower", "ci_upper", "p_value")


def write_replicates_csv(fileobj, results) -> None:
    """Per-replicate audit trail, one row per (replicate, method)."""
    writer = csv.writer(fileobj, lineterminator="\n")
    writer.writerow(REPLICATE_COLUMNS)
    for res in results:
        if res.excluded:
            writer.writerow([res.replicate_index, 1, res.reason, "", "", "", "", "", "", ""])
            continue
        for method in METHOD_ORDER:
            if method not in res.estimates:
                continue
            e = res.estimates[method]
            writer.writerow([
                res.replicate_index, 0, "", method.value, _fmt(e.point),
                _fmt(e.variance), _fmt(e.se), _fmt(e.ci_lower), _fmt(e.ci_upper),
                _fmt(e.p_value),
            ])
