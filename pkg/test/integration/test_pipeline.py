import pytest

from src.config import Config
from src.core.analysis.engine import AnalysisEngine
from src.core.analysis.estimators import Method
from src.core.data.panel_store import OutcomeKind
from src.core.errors import ConfigError
from test.conftest import FLINT, PUBLISHED_DONORS


@pytest.fixture
def engine(config_file):
    return AnalysisEngine(Config(str(config_file)).run_config())


@pytest.mark.integration
class TestAnalysisEngine:
    def test_donor_selection(self, engine):
        panel = engine.analysis_panel()
        assert panel.treated_unit == FLINT
        assert panel.donors == tuple(sorted(PUBLISHED_DONORS))

    def test_placebo_run(self, engine):
        outcome = engine.placebo()
        assert outcome.distribution.n_placebos == len(PUBLISHED_DONORS)
        assert outcome.inference.tau == outcome.estimate.tau_hat
        assert outcome.rmspe is None

    def test_scm_run_has_ratio_test(self, config_file):
        run = Config(str(config_file)).run_config({"method": "scm"})
        outcome = AnalysisEngine(run).placebo()
        assert outcome.estimate.method == Method.SCM
        assert outcome.rmspe.n_placebos == len(PUBLISHED_DONORS)
        assert isinstance(outcome.overfit.overfit, bool)

    def test_covariate_adjustment(self, config_file):
        run = Config(str(config_file)).run_config({"covariates": ["median_household_income"]})
        panel = AnalysisEngine(run).analysis_panel()
        assert panel.outcome_kind == OutcomeKind.LEVEL
        assert panel.outcomes.shape == (len(PUBLISHED_DONORS) + 1, 4)

    def test_shorter_pre_window(self, config_file):
        run = Config(str(config_file)).run_config({"pre_period_start": 2022})
        result = AnalysisEngine(run).estimate()
        assert result.n_pre == 2

    def test_donor_summary(self, engine):
        summary = engine.donor_summary(list(PUBLISHED_DONORS))
        assert list(summary.index) == ["mean", "median"]
        assert summary.loc["mean", "poverty_rate"] == pytest.approx(26.7, abs=0.05)

    def test_criteria_without_characteristics(self, config_file):
        run = Config(str(config_file)).run_config({"characteristics_path": None})
        with pytest.raises(ConfigError):
            AnalysisEngine(run).analysis_panel()

    def test_spec_grid_from_config(self, engine):
        result = engine.sensitivity()
        assert [row.cell.cell_id for row in result.rows] == ["primary|default|all|nocov"]
        assert result.rows[0].estimate.tau_hat == pytest.approx(engine.estimate().tau_hat)
