import numpy as np
import pytest

from src.core.analysis import inference
from src.core.analysis.estimators import EstimatorSettings, Method, estimate
from src.core.analysis.inference import (
    InferenceMode,
    OverfitThresholds,
    PlaceboDistribution,
    PlaceboEntry,
    gaussian_interval,
    gaussian_placebo_inference,
    infer,
    inference_payload,
    overfit_diagnostic,
    overfit_from_estimate,
    permutation_inference,
    permutation_p,
    placebo_distribution,
    rmspe_ratio_test,
)
from src.core.data.panel_store import panel_from_matrix
from src.core.errors import DegenerateDistribution, InsufficientDonors, SolverError
from test.conftest import FLINT, PUBLISHED_DONORS

# (estimate, ci_low, ci_high, published p)
PUBLISHED_INTERVALS = [
    (-7.0, -12.9, -1.0, 0.021),
    (-5.8, -10.0, -1.5, 0.008),
    (-6.3, -11.7, -0.9, 0.022),
    (-7.9, -12.5, -3.4, 0.001),
    (-3.6, -8.2, 1.0, 0.13),
    (-3.4, -9.0, 2.3, 0.24),
    (96.7, 35.0, 158.4, 0.002),
]


def make_dist(taus, ratios=None, treated_ratio=1.0, treated_pre=1.0, scale=10.0):
    ratios = ratios if ratios is not None else [1.0] * len(taus)
    entries = tuple(
        PlaceboEntry(unit=f"d{i:02d}", tau=float(t), pre_rmspe=1.0, post_rmspe=float(r), rmspe_ratio=float(r))
        for i, (t, r) in enumerate(zip(taus, ratios))
    )
    treated = PlaceboEntry(unit="treated", tau=0.0, pre_rmspe=treated_pre,
                           post_rmspe=treated_ratio * treated_pre, rmspe_ratio=treated_ratio)
    return PlaceboDistribution(entries=entries, treated_entry=treated, method="scm", outcome_scale=scale)


@pytest.mark.unit
class TestGaussianInterval:
    @pytest.mark.parametrize("tau,low,high,published_p", PUBLISHED_INTERVALS)
    def test_published_ci_p_consistency(self, tau, low, high, published_p):
        se = (high - low) / 2.0 / 1.959964
        ci_low, ci_high, p = gaussian_interval(tau, se)
        assert p == pytest.approx(published_p, abs=0.03)
        assert ci_low == pytest.approx(tau - 1.959964 * se, abs=1e-5)
        assert ci_high - ci_low == pytest.approx(2 * 1.959964 * se, abs=1e-5)

    def test_null_estimate(self):
        low, high, p = gaussian_interval(0.0, 2.5)
        assert p == 1.0
        assert low == -high

    def test_zero_se(self):
        with pytest.raises(DegenerateDistribution):
            gaussian_interval(1.0, 0.0)

    def test_null_value_shifts_test(self):
        _, _, p = gaussian_interval(-5.0, 1.0, null_value=-5.0)
        assert p == 1.0


@pytest.mark.unit
class TestPermutationP:
    def test_hand_count(self):
        assert permutation_p(3.5, make_dist([1, 2, 3, 4, 5])) == pytest.approx(3 / 6)

    def test_rank_without_treated(self):
        assert permutation_p(3.5, make_dist([1, 2, 3, 4, 5]), include_treated=False) == pytest.approx(0.4)

    def test_largest_effect(self):
        dist = make_dist(np.linspace(-2.0, 2.0, 21))
        assert permutation_p(-7.0, dist) == pytest.approx(1 / 22)
        assert permutation_p(-7.0, dist, include_treated=False) == 0.0

    def test_zero_effect(self):
        assert permutation_p(0.0, make_dist([0.5, -1.0, 2.0])) == 1.0
        assert permutation_p(0.0, make_dist([0.5, -1.0, 2.0]), include_treated=False) == 1.0

    def test_values_on_grid(self):
        rng = np.random.default_rng(0)
        dist = make_dist(rng.normal(size=13))
        for tau in rng.normal(size=20):
            p = permutation_p(float(tau), dist)
            assert p >= 1 / 14
            assert p * 14 == pytest.approx(round(p * 14))
            p_rank = permutation_p(float(tau), dist, include_treated=False)
            assert p_rank * 13 == pytest.approx(round(p_rank * 13))

    @pytest.mark.parametrize("alpha", [0.05, 0.10])
    def test_exchangeable_rejection_within_level(self, alpha):
        values = np.random.default_rng(11).normal(size=21)
        rejections = 0
        for i in range(values.size):
            dist = make_dist(np.delete(values, i))
            rejections += permutation_p(float(values[i]), dist) <= alpha
        assert rejections / values.size <= alpha

    def test_rank_without_treated_over_rejects(self):
        values = np.random.default_rng(11).normal(size=21)
        rejections = sum(
            permutation_p(float(values[i]), make_dist(np.delete(values, i)), include_treated=False) <= 0.05
            for i in range(values.size)
        )
        assert rejections / values.size > 0.05


@pytest.mark.unit
class TestRmspeRatio:
    def test_hand_count(self):
        dist = make_dist([0.0] * 10, ratios=list(range(1, 11)), treated_ratio=7.5)
        result = rmspe_ratio_test(dist)
        assert result.p_value == pytest.approx(0.3)
        assert (result.placebo_min, result.placebo_max) == (1.0, 10.0)

    def test_ties_count(self):
        dist = make_dist([0.0] * 4, ratios=[2.0] * 4, treated_ratio=2.0)
        assert rmspe_ratio_test(dist).p_value == 1.0

    def test_extreme_treated_ratio(self):
        ratios = np.linspace(0.29, 5.35, 21)
        dist = make_dist([0.0] * 21, ratios=ratios, treated_ratio=800e9)
        assert rmspe_ratio_test(dist).p_value == 0.0

    def test_scale_free(self):
        rng = np.random.default_rng(1)
        outcomes = rng.normal(20.0, 3.0, size=(8, 5))
        panel = panel_from_matrix(outcomes, "u000", 5)
        settings = EstimatorSettings(method=Method.SCM)
        base = rmspe_ratio_test(placebo_distribution(panel, settings)).p_value
        scaled = rmspe_ratio_test(placebo_distribution(panel.with_outcomes(outcomes * 4.0), settings)).p_value
        assert scaled == base


@pytest.mark.unit
class TestOverfit:
    def test_billions_ratio_flags(self):
        report = overfit_diagnostic(make_dist([0.0, 1.0], treated_ratio=38e9))
        assert report.overfit
        assert report.triggers == ["rmspe_ratio_above_threshold"]
        assert "Extend the pre-intervention window" in report.advisory

    def test_moderate_ratio_passes(self):
        report = overfit_diagnostic(make_dist([0.0, 1.0], treated_ratio=7.78))
        assert not report.overfit
        assert report.advisory is None

    def test_perfect_fit_flags(self):
        twin = [5.0, 6.0, 4.0, 7.0]
        panel = panel_from_matrix([twin, twin, [1.0, 9.0, 2.0, 3.0]], "u000", 4)
        result = estimate(panel, EstimatorSettings(method=Method.SCM))
        report = overfit_from_estimate(result, panel.outcome_scale)
        assert report.overfit
        assert "pre_rmspe_below_floor" in report.triggers

    def test_custom_thresholds(self):
        report = overfit_diagnostic(make_dist([0.0, 1.0], treated_ratio=7.78), OverfitThresholds(ratio_threshold=5.0))
        assert report.overfit


@pytest.mark.unit
class TestPlaceboDistribution:
    def test_one_entry_per_donor(self, flint_panel):
        dist = placebo_distribution(flint_panel)
        assert [e.unit for e in dist.entries] == sorted(PUBLISHED_DONORS)
        assert dist.n_placebos == 21
        assert dist.treated_entry.unit == FLINT
        assert dist.leave_treated_out

    def test_identical_donors_give_null_placebos(self):
        panel = panel_from_matrix([[1.0, 2.0, 3.0, 9.0], [1.0, 2.0, 4.0, 3.0], [1.0, 2.0, 4.0, 3.0]], "u000", 4)
        dist = placebo_distribution(panel)
        np.testing.assert_allclose(dist.taus, [0.0, 0.0], atol=1e-10)

    def test_needs_two_donors(self):
        with pytest.raises(InsufficientDonors):
            placebo_distribution(panel_from_matrix([[1.0, 2.0], [1.0, 3.0]], "u000", 2))

    def test_donor_order_invariance(self, flint_panel):
        reordered = panel_from_matrix(flint_panel.outcomes[::-1], FLINT, flint_panel.treatment_start,
                                      units=flint_panel.units[::-1], periods=flint_panel.periods)
        a = placebo_distribution(flint_panel).to_frame()
        b = placebo_distribution(reordered).to_frame()
        assert list(a["unit"]) == list(b["unit"])
        np.testing.assert_allclose(a["tau_placebo"], b["tau_placebo"], atol=1e-8)

    def test_threads_match_serial(self, flint_panel):
        serial = placebo_distribution(flint_panel, max_workers=1).to_frame()
        threaded = placebo_distribution(flint_panel, max_workers=4).to_frame()
        assert serial.equals(threaded)

    def test_keep_treated_in_pool(self, flint_panel):
        dist = placebo_distribution(flint_panel, EstimatorSettings(method=Method.DID), leave_treated_out=False)
        assert dist.n_placebos == 21
        assert not dist.leave_treated_out

    def test_failed_fit_is_flagged_and_excluded(self, flint_panel, mocker):
        real_estimate = inference.estimate

        def flaky(panel, settings):
            if panel.treated_unit == "Albion":
                raise SolverError("did not converge")
            return real_estimate(panel, settings)

        mocker.patch.object(inference, "estimate", side_effect=flaky)
        dist = placebo_distribution(flint_panel, EstimatorSettings(method=Method.DID))
        assert dist.n_placebos == 20
        failed = [e for e in dist.entries if not e.ok]
        assert [e.unit for e in failed] == ["Albion"]
        assert "Albion" in dist.warnings[0]


@pytest.mark.unit
class TestInferenceResults:
    def test_gaussian_mode(self):
        dist = make_dist([-1.0, 0.5, 1.5, -0.5, 0.0])
        result = gaussian_placebo_inference(-3.0, dist)
        assert result.se == pytest.approx(np.std([-1.0, 0.5, 1.5, -0.5, 0.0], ddof=1))
        assert result.ci_low <= -3.0 <= result.ci_high
        assert result.p_value == result.p_gaussian
        assert result.p_permutation == pytest.approx(1 / 6)

    def test_gaussian_needs_spread(self):
        with pytest.raises(DegenerateDistribution):
            gaussian_placebo_inference(1.0, make_dist([0.0, 0.0, 0.0]))

    def test_permutation_mode_survives_zero_spread(self):
        result = permutation_inference(1.0, make_dist([0.0, 0.0, 0.0]))
        assert result.se is None
        assert result.p_value == pytest.approx(1 / 4)

    def test_dispatch_accepts_short_names(self):
        dist = make_dist([-1.0, 0.5, 1.5])
        assert infer(0.2, dist, "gaussian").mode == InferenceMode.GAUSSIAN
        assert infer(0.2, dist, "permutation").mode == InferenceMode.PERMUTATION

    def test_permutation_mode_counts_treated_by_default(self):
        dist = make_dist(np.linspace(-1.0, 1.0, 19))
        assert infer(-5.0, dist, "permutation").p_value == pytest.approx(1 / 20)
        assert infer(-5.0, dist, "permutation", include_treated=False).p_value == 0.0
        assert infer(-5.0, dist).p_permutation == pytest.approx(1 / 20)

    def test_significance(self):
        dist = make_dist(np.linspace(-1.0, 1.0, 21))
        assert infer(-5.0, dist).significant
        assert not infer(0.1, dist).significant

    def test_payload(self):
        dist = make_dist([-1.0, 0.5, 1.5])
        payload = inference_payload(infer(0.2, dist), dist)
        assert payload["mode"] == "gaussian_placebo"
        assert payload["n_failed"] == 0
        assert {"se", "ci_low", "ci_high", "p_value", "significant", "method"} <= set(payload)
