import numpy as np
import pytest

from src.core.analysis.estimators import EstimatorSettings, Method, estimate
from src.core.analysis.sensitivity import (
    AS_LOADED,
    DonorPoolVariant,
    SpecCell,
    SpecGrid,
    composition_checks,
    estimate_spread,
    run_spec_grid,
)
from src.core.data.donor_pool import DonorCriteria
from src.core.data.panel_store import CharacteristicsTable, panel_from_matrix
from src.core.errors import ConfigError, UnknownDonorPool
from src.core.simulation.simgen import FactorModelSpec, generate_panel
from test.conftest import EXCLUSIONS, PUBLISHED_DONORS


@pytest.fixture
def pools():
    return {
        "prespecified": DonorPoolVariant(criteria=DonorCriteria.pre_specified(EXCLUSIONS)),
        "small": DonorPoolVariant(donors=PUBLISHED_DONORS[:6]),
    }


@pytest.mark.unit
class TestSpecGrid:
    def test_cells_are_sorted_and_unique(self):
        grid = SpecGrid(donor_pools=["b", "a", "a"], pre_period_starts=[None, 2022])
        ids = [c.cell_id for c in grid.cells()]
        assert ids == sorted(ids)
        assert len(ids) == 4
        assert "primary|a|all|nocov" in ids

    def test_cell_id(self):
        cell = SpecCell(outcome="births", donor_pool="alt", pre_period_start=2019, covariates=True)
        assert cell.cell_id == "births|alt|2019|cov"

    def test_unknown_pool(self):
        grid = SpecGrid(donor_pools=["nowhere"])
        with pytest.raises(UnknownDonorPool):
            grid.resolve_pool("nowhere")

    def test_covariate_cells_need_columns(self):
        with pytest.raises(ValueError):
            SpecGrid(covariates=[False, True])

    def test_permutation_counts_treated_by_default(self):
        assert SpecGrid().include_treated is True

    def test_pool_takes_one_source(self):
        with pytest.raises(ValueError):
            DonorPoolVariant(criteria=DonorCriteria.pre_specified(), donors=("a",))


@pytest.mark.unit
class TestRunSpecGrid:
    def test_one_cell_matches_direct_estimate(self, flint_panel):
        result = run_spec_grid(SpecGrid(), {"primary": flint_panel})
        assert len(result.rows) == 1
        assert result.rows[0].estimate.tau_hat == estimate(flint_panel).tau_hat
        assert result.rows[0].cell.donor_pool == AS_LOADED

    def test_full_grid(self, flint_panel, characteristics, pools):
        grid = SpecGrid(
            donor_pools=["prespecified", "small"],
            pre_period_starts=[None, 2022],
            covariates=[False, True],
            covariate_columns=["median_household_income", "pct_less_than_hs"],
            pools=pools,
        )
        result = run_spec_grid(grid, {"primary": flint_panel}, characteristics)
        frame = result.to_frame()
        assert len(frame) + len(result.failures) == 8
        assert list(frame["cell_id"]) == sorted(frame["cell_id"])
        small = frame[frame["donor_pool"] == "small"]
        assert set(small["n_donors"]) == {6}
        assert set(frame[frame["pre_period_start"] == 2022]["n_pre"]) == {2}

    def test_failed_cells_recorded(self, flint_panel):
        grid = SpecGrid(pre_period_starts=[None, 2024])
        result = run_spec_grid(grid, {"primary": flint_panel})
        assert len(result.rows) == 1
        assert [f.code for f in result.failures] == ["NoPrePeriod"]
        assert result.to_dict()["failures"][0]["cell_id"] == "primary|as_loaded|2024|nocov"

    def test_unknown_outcome(self, flint_panel):
        with pytest.raises(ConfigError):
            run_spec_grid(SpecGrid(outcomes=["births"]), {"primary": flint_panel})

    def test_unknown_pool_fails_before_running(self, flint_panel):
        with pytest.raises(UnknownDonorPool):
            run_spec_grid(SpecGrid(donor_pools=["nowhere"]), {"primary": flint_panel})

    def test_non_numeric_covariate_fails_its_cell_only(self, flint_panel, characteristics):
        frame = characteristics.frame.astype(object)
        frame.loc["Lansing", "median_household_income"] = "n/a"
        grid = SpecGrid(covariates=[False, True], covariate_columns=["median_household_income"])
        result = run_spec_grid(grid, {"primary": flint_panel}, CharacteristicsTable(frame))
        assert [row.cell.cell_id for row in result.rows] == ["primary|as_loaded|all|nocov"]
        assert [(f.cell.cell_id, f.code) for f in result.failures] == [("primary|as_loaded|all|cov", "UnknownUnit")]
        assert "Lansing" in result.failures[0].message

    def test_linalg_error_fails_its_cell_only(self, flint_panel, mocker):
        real_estimate = estimate

        def singular_on_short_panels(panel, settings=None):
            if len(panel.pre_periods) < 3:
                raise np.linalg.LinAlgError("Singular matrix")
            return real_estimate(panel, settings)

        mocker.patch("src.core.analysis.sensitivity.estimate", side_effect=singular_on_short_panels)
        result = run_spec_grid(SpecGrid(pre_period_starts=[None, 2022]), {"primary": flint_panel})
        assert [row.cell.cell_id for row in result.rows] == ["primary|as_loaded|all|nocov"]
        assert [f.code for f in result.failures] == ["LinAlgError"]

    def test_criteria_pool_needs_characteristics(self, flint_panel, pools):
        grid = SpecGrid(donor_pools=["prespecified"], pools=pools)
        result = run_spec_grid(grid, {"primary": flint_panel})
        assert [f.code for f in result.failures] == ["ConfigError"]

    def test_independent_of_enumeration_and_threads(self, flint_panel, pools, characteristics):
        axes = dict(pools=pools, pre_period_starts=[None, 2022])
        a = run_spec_grid(SpecGrid(donor_pools=["small", "prespecified"], **axes), {"primary": flint_panel},
                          characteristics)
        b = run_spec_grid(SpecGrid(donor_pools=["prespecified", "small"], **axes), {"primary": flint_panel},
                          characteristics, max_workers=3)
        assert a.to_frame().equals(b.to_frame())

    def test_scm_ratio_table(self, flint_panel):
        grid = SpecGrid(settings=EstimatorSettings(method=Method.SCM), pre_period_starts=[None, 2022])
        table = run_spec_grid(grid, {"primary": flint_panel}).scm_ratio_table()
        assert list(table.columns) == ["specification", "estimate", "treated_ratio", "ratio_min", "ratio_max",
                                       "p_value", "n_pre", "n_donors"]
        assert len(table) == 2
        assert table["p_value"].between(0, 1).all()

    def test_spread_under_shared_process(self):
        spec = FactorModelSpec(n_donors=15, n_pre=5, n_post=1, n_factors=0, noise_sd=0.05, true_tau=-5.0, seed=8)
        panel, _ = generate_panel(spec)
        grid = SpecGrid(pre_period_starts=[None, 2, 3])
        result = run_spec_grid(grid, {"primary": panel})
        assert len(result.rows) == 3
        assert estimate_spread(result) <= 1.0


@pytest.mark.unit
class TestCompositionChecks:
    def test_flags_large_effects_only(self):
        rng = np.random.default_rng(2)
        base = rng.normal(50.0, 1.0, size=(12, 4))
        shifted = base.copy()
        shifted[0, -1] += 25.0
        panels = {
            "births": panel_from_matrix(shifted, "u000", 4),
            "share_teen": panel_from_matrix(base, "u000", 4),
        }
        result = composition_checks(panels)
        rows = {row.cell.outcome: row for row in result.rows}
        assert rows["births"].significant
        assert rows["births"].estimate.tau_hat > 0

    def test_constant_outcome_not_flagged(self):
        panels = {"share": panel_from_matrix(np.full((6, 4), 12.5), "u000", 4)}
        result = composition_checks(panels)
        row = result.rows[0]
        assert row.estimate.tau_hat == pytest.approx(0.0, abs=1e-12)
        assert row.inference is None
        assert not row.significant
        assert any("Inference unavailable" in note for note in row.notes)
