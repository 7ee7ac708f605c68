import numpy as np
import pytest

from stdeff import (
    BootstrapDegenerateError,
    FitConfig,
    GlmFit,
    LooFailureError,
    LooFits,
    Method,
    ModelSpec,
    StandardizedResult,
    TrialDataset,
    bootstrap_variance,
    fit_leave_one_out,
    fit_logistic,
    if_loo_variance,
    if_plugin_variance,
    standardize,
    unadjusted_diff_means,
    wald_interval,
)
from stdeff.glm import counterfactual_probabilities

from conftest import draw_dgp_dataset

Z975 = 1.959963984540054


def balanced_treatment_only_dataset(seed, n=40):
    rng = np.random.default_rng(seed)
    a = np.array([0.0, 1.0] * (n // 2))
    y = (rng.random(n) < 0.35 + 0.2 * a).astype(float)
    if y[a == 1].min() == y[a == 1].max():
        y[0] = 1.0 - y[0]
    return TrialDataset(np.zeros((n, 1)), a, y, 0.5)


class TestWaldInterval:
    def test_standard_normal_quantile(self):
        lower, upper, p = wald_interval(0.0, 1.0, 0.95)
        assert lower == pytest.approx(-Z975, abs=1e-9)
        assert upper == pytest.approx(Z975, abs=1e-9)
        assert p == pytest.approx(1.0, abs=1e-12)

    def test_unadjusted_example_arithmetic(self):
        lower, upper, _ = wald_interval(0.25, 0.109375, 0.95)
        se = np.sqrt(0.109375)
        assert lower == pytest.approx(0.25 - Z975 * se, abs=1e-9)
        assert upper == pytest.approx(0.25 + Z975 * se, abs=1e-9)

    def test_degenerate_variance_convention(self):
        assert wald_interval(0.1, 0.0) == (0.1, 0.1, 0.0)
        assert wald_interval(0.0, 0.0) == (0.0, 0.0, 1.0)

    def test_half_width_scales_as_sqrt_variance(self):
        for v in (1e-4, 0.03, 1.7):
            lo1, hi1, _ = wald_interval(0.2, v)
            lo2, hi2, _ = wald_interval(0.2, 2.0 * v)
            assert (hi2 - lo2) / (hi1 - lo1) == pytest.approx(np.sqrt(2.0), rel=1e-12)

    def test_rejects_negative_variance(self):
        with pytest.raises(ValueError):
            wald_interval(0.0, -1e-9)


class TestIfPluginVariance:
    def test_equals_unadjusted_on_balanced_treatment_only(self):
        # Algebraic identity: with a saturated treatment-only model, pi0=1/2
        # and equal arm sizes, the influence plug-in reduces to the Bernoulli
        # plug-in exactly.
        for seed in range(6):
            data = balanced_treatment_only_dataset(seed)
            res = standardize(data, ModelSpec())
            plug = if_plugin_variance(data, res)
            unadj = unadjusted_diff_means(data)
            assert plug.variance == pytest.approx(unadj.variance, abs=1e-12)
            assert plug.se == pytest.approx(unadj.se, abs=1e-12)

    def test_perfect_predictions_with_constant_contrast_vanish(self):
        n = 10
        a = np.array([1.0, 0.0] * 5)
        y = np.array([1, 0, 0, 0, 1, 1, 0, 0, 1, 0], dtype=float)
        data = TrialDataset(np.zeros((n, 1)), a, y, 0.5)
        contrast = 0.25  # exactly representable, so the summands cancel exactly
        preds_1 = y + (1.0 - a) * contrast
        preds_0 = y - a * contrast
        dummy = GlmFit(np.zeros(2), True, 1, -1.0, False)
        result = StandardizedResult(contrast, dummy, preds_1, preds_0)
        est = if_plugin_variance(data, result)
        assert est.variance == 0.0
        assert (est.ci_lower, est.ci_upper) == (contrast, contrast)

    def test_matches_literal_transcription(self):
        # Loop transcription of the plug-in formula on a 20-row dataset.
        data = draw_dgp_dataset(20, beta0=-1.4828, beta_a=0.3967, seed=77)
        spec = ModelSpec.main_terms(6)
        res = standardize(data, spec)
        est = if_plugin_variance(data, res)

        n = data.n
        total = 0.0
        for i in range(n):
            a_i, y_i = data.treatment[i], data.outcome[i]
            mu1_i, mu0_i = res.predictions_1[i], res.predictions_0[i]
            mu_obs = mu1_i if a_i == 1.0 else mu0_i
            term = (a_i / data.pi0 - (1.0 - a_i) / (1.0 - data.pi0)) * (y_i - mu_obs)
            term += mu1_i - mu0_i - res.theta_hat
            total += term * term
        v_hat = total / n
        assert est.variance == pytest.approx(v_hat / n, rel=1e-12)


def inject_full_fit_as_loo(data, res):
    n = data.n
    mu_obs = np.where(data.treatment == 1.0, res.predictions_1, res.predictions_0)
    return LooFits(
        beta=np.tile(res.fit.beta, (n, 1)),
        converged=np.ones(n, bool),
        separation=np.zeros(n, bool),
        failed=np.zeros(n, bool),
        iterations=np.ones(n, int),
        mu1_own=res.predictions_1,
        mu0_own=res.predictions_0,
        mu_observed_own=mu_obs,
    )


class TestIfLooVariance:
    def test_collapses_to_plugin_when_loo_equals_full_fit(self, tame_data, tame_spec):
        res = standardize(tame_data, tame_spec)
        loo = inject_full_fit_as_loo(tame_data, res)
        assert if_loo_variance(tame_data, res, loo).variance == pytest.approx(
            if_plugin_variance(tame_data, res).variance, abs=1e-15
        )

    def test_hand_enumerated_four_point_problem(self):
        # Intercept+treatment model, A=(0,0,1,1), Y=(0,1,0,1), pi0=1/2.
        # Full fit: both arm means 0.5, theta=0. Deleting any observation
        # leaves a single-observation arm whose refit mean is pinned at that
        # observation's outcome; the other arm stays at 1/2. Enumerating:
        # phi = +-1.5 for every i, so sigma2 = 4 * 2.25 / 16 = 0.5625.
        data = TrialDataset(np.zeros((4, 1)), [0, 0, 1, 1], [0, 1, 0, 1], 0.5)
        spec = ModelSpec()
        res = standardize(data, spec)
        assert res.theta_hat == pytest.approx(0.0, abs=1e-9)
        loo = fit_leave_one_out(data, spec)
        assert not loo.failed.any()
        est = if_loo_variance(data, res, loo)
        assert est.variance == pytest.approx(0.5625, abs=1e-4)

    def test_failed_index_raises_loo_failure(self, tame_data, tame_spec):
        res = standardize(tame_data, tame_spec)
        loo = inject_full_fit_as_loo(tame_data, res)
        failed = loo.failed.copy()
        failed[3] = True
        broken = LooFits(loo.beta, loo.converged, loo.separation, failed,
                         loo.iterations, loo.mu1_own, loo.mu0_own, loo.mu_observed_own)
        with pytest.raises(LooFailureError):
            if_loo_variance(tame_data, res, broken)

    def test_nonnegative_and_larger_than_plugin_on_hard_data(self):
        # Not a theorem per dataset, but on a small rare-event draw the LOO
        # residuals should not be smaller than the overfit plug-in ones.
        data = draw_dgp_dataset(50, beta0=-1.4828, beta_a=0.0, seed=6)
        spec = ModelSpec.main_terms(6)
        res = standardize(data, spec)
        loo = fit_leave_one_out(data, spec)
        v_loo = if_loo_variance(data, res, loo).variance
        v_plug = if_plugin_variance(data, res).variance
        assert v_loo >= 0.0 and v_plug >= 0.0
        assert v_loo > v_plug


class TestBootstrapVariance:
    def test_seeded_reproducibility(self, tame_data, tame_spec):
        a = bootstrap_variance(tame_data, tame_spec, n_boot=100, seed=11)
        b = bootstrap_variance(tame_data, tame_spec, n_boot=100, seed=11)
        assert a.variance == b.variance
        assert a.diagnostics == b.diagnostics
        c = bootstrap_variance(tame_data, tame_spec, n_boot=100, seed=12)
        assert c.variance != a.variance

    def test_point_estimate_is_full_data_theta(self, tame_data, tame_spec):
        res = standardize(tame_data, tame_spec)
        est = bootstrap_variance(tame_data, tame_spec, n_boot=50, seed=1, result=res)
        assert est.point == res.theta_hat

    def test_degenerate_resamples_raise(self):
        # Three rows, one of them the whole control arm: most resamples lose
        # an arm or have constant outcomes within both arms.
        data = TrialDataset(np.zeros((3, 1)), [0, 1, 1], [0, 1, 0], 0.5)
        res_fit = fit_logistic(data, ModelSpec())
        mu1, mu0 = counterfactual_probabilities(res_fit, ModelSpec(), data.covariates)
        res = StandardizedResult(float(np.mean(mu1 - mu0)), res_fit, mu1, mu0)
        with pytest.raises(BootstrapDegenerateError):
            bootstrap_variance(data, ModelSpec(), n_boot=200, seed=5, result=res)

    def test_matches_independent_resampling_implementation(self):
        # Dual implementation sharing the identical row-index stream: draw the
        # same indices, materialize each resampled dataset, refit through the
        # public scalar API, apply the same failure rule, and compare.
        data = draw_dgp_dataset(60, beta0=-1.4828, beta_a=0.3967, seed=15)
        spec = ModelSpec.main_terms(6)
        cfg = FitConfig()
        res = standardize(data, spec, cfg)
        n_boot, seed = 1000, 99
        est = bootstrap_variance(data, spec, cfg, n_boot=n_boot, seed=seed, result=res)

        rng = np.random.Generator(np.random.Philox(key=seed))
        indices = rng.integers(0, data.n, size=(n_boot, data.n))
        thetas = []
        n_failed = 0
        for b in range(n_boot):
            rows = indices[b]
            a_b, y_b = data.treatment[rows], data.outcome[rows]
            x_b = data.covariates[rows]
            y1, y0 = y_b[a_b == 1.0], y_b[a_b == 0.0]
            if (y1.size == 0 or y0.size == 0
                    or (y1.min() == y1.max() and y0.min() == y0.max())):
                n_failed += 1
                continue
            sub = TrialDataset(x_b, a_b, y_b, data.pi0)
            fit = fit_logistic(sub, spec, cfg)
            if not fit.converged:
                n_failed += 1
                continue
            mu1, mu0 = counterfactual_probabilities(fit, spec, x_b)
            thetas.append(float(np.mean(mu1 - mu0)))
        reference = float(np.var(thetas, ddof=1))
        assert n_failed == est.diagnostics["n_failed"]
        assert est.variance == pytest.approx(reference, rel=0.10)


class TestEstimateInvariants:
    def test_interval_brackets_point_and_se_consistency(self, tame_data, tame_spec):
        res = standardize(tame_data, tame_spec)
        loo = fit_leave_one_out(tame_data, tame_spec)
        for est in (
            if_plugin_variance(tame_data, res),
            if_loo_variance(tame_data, res, loo),
            bootstrap_variance(tame_data, tame_spec, n_boot=80, seed=2, result=res),
            unadjusted_diff_means(tame_data),
        ):
            assert est.ci_lower <= est.point <= est.ci_upper
            assert est.se**2 == pytest.approx(est.variance, rel=1e-12)
            assert 0.0 <= est.p_value <= 1.0
            assert est.variance >= 0.0

    def test_method_tags(self, tame_data, tame_spec):
        res = standardize(tame_data, tame_spec)
        assert if_plugin_variance(tame_data, res).method is Method.IF_PLUGIN
        assert unadjusted_diff_means(tame_data).method is Method.UNADJUSTED


class TestInfluenceValues:
    def test_plugin_influence_is_exactly_centered_at_interior_mle(self, tame_data, tame_spec):
        # The intercept and treatment score equations force both arm residual
        # sums to zero, so the influence contributions average to zero.
        from stdeff import plugin_influence
        res = standardize(tame_data, tame_spec)
        phi = plugin_influence(tame_data, res)
        assert phi.n == tame_data.n
        assert abs(float(phi.values.mean())) < 1e-9

    def test_loo_influence_shape_and_finiteness(self, tame_data, tame_spec):
        from stdeff import loo_influence
        res = standardize(tame_data, tame_spec)
        loo = fit_leave_one_out(tame_data, tame_spec)
        phi = loo_influence(tame_data, res, loo)
        assert phi.values.shape == (tame_data.n,)
        assert np.isfinite(phi.values).all()

    def test_rejects_nonfinite_values(self):
        from stdeff import InfluenceValues
        with pytest.raises(ValueError):
            InfluenceValues(np.array([0.0, np.inf]))
