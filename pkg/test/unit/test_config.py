from pathlib import Path

import pytest

from src.config import Config
from src.core.analysis.estimators import Method
from src.core.analysis.inference import InferenceMode
from src.core.data.panel_store import OutcomeKind
from src.core.errors import ConfigError
from test.conftest import EXCLUSIONS, FLINT, TREATMENT_START, write_config


@pytest.mark.unit
class TestConfig:
    def test_load_config_success(self, config_file):
        """Test successful configuration loading"""
        config = Config(str(config_file))

        assert config.get('RUN', 'method') == 'sdid'
        assert config.getint('RUN', 'seed') == 7
        assert config.getint('DATA', 'treatment_start') == TREATMENT_START

    def test_load_config_file_not_found(self, temp_dir):
        """Test configuration loading with missing file"""
        with pytest.raises(FileNotFoundError):
            Config(str(temp_dir / "non_existent.ini"))

    def test_optional_missing_file(self, temp_dir):
        config = Config(str(temp_dir / "non_existent.ini"), required=False)
        assert config.get('RUN', 'method', 'sdid') == 'sdid'

    def test_get_with_fallback(self, config_file):
        """Test get method with fallback values"""
        config = Config(str(config_file))

        assert config.get('DATA', 'treated_unit') == FLINT
        assert config.get('DATA', 'non_existent_key', 'default_value') == 'default_value'
        assert config.get('NON_EXISTENT', 'key', 'default') == 'default'

    def test_getint_malformed(self, config_file):
        config = Config(str(config_file))
        assert config.getint('RUN', 'non_existent', 9000) == 9000

        config.config.set('RUN', 'seed', 'not_a_number')
        with pytest.raises(ConfigError):
            config.getint('RUN', 'seed')

    def test_getfloat(self, config_file):
        config = Config(str(config_file))
        config.config.set('RUN', 'zeta_override', '0.25')
        assert config.getfloat('RUN', 'zeta_override') == 0.25
        assert config.getfloat('RUN', 'non_existent_float', 2.5) == 2.5

        config.config.set('RUN', 'zeta_override', 'large')
        with pytest.raises(ConfigError):
            config.getfloat('RUN', 'zeta_override')

    def test_getboolean(self, config_file):
        config = Config(str(config_file))
        assert config.getboolean('RUN', 'non_existent_flag', False) is False

        config.config.set('RUN', 'include_treated', 'yes')
        assert config.getboolean('RUN', 'include_treated') is True

        config.config.set('RUN', 'include_treated', 'perhaps')
        with pytest.raises(ConfigError):
            config.getboolean('RUN', 'include_treated')

    def test_logging_config_property(self, config_file, temp_dir):
        """Test logging configuration property"""
        logging_config = Config(str(config_file)).logging_config

        assert logging_config['level'] == 'DEBUG'
        assert logging_config['file'] == str(temp_dir / "logs" / "test.log")
        assert logging_config['max_size_mb'] == 1
        assert logging_config['backup_count'] == 2

    def test_output_directory(self, config_file, temp_dir):
        assert Config(str(config_file)).output_directory == temp_dir / "output"


@pytest.mark.unit
class TestRunConfig:
    def test_values_from_file(self, config_file, flint_panel_csv):
        run = Config(str(config_file)).run_config()

        assert run.method == Method.SDID
        assert run.inference_mode == InferenceMode.GAUSSIAN
        assert run.seed == 7
        assert run.panel_path == Path(flint_panel_csv)
        assert run.panel_schema.outcome_kind == OutcomeKind.RATE
        assert run.assignment.treated_unit == FLINT
        assert run.assignment.treatment_start == TREATMENT_START
        assert run.criteria.population_max == 125000
        assert run.criteria.exclusions == frozenset(EXCLUSIONS)
        assert run.donors is None
        assert run.simulation.seed == 7
        assert run.include_treated is True

    def test_flags_override_file(self, config_file, temp_dir):
        run = Config(str(config_file)).run_config({
            'output_directory': temp_dir / "elsewhere",
            'seed': 11,
            'method': 'scm',
            'inference_mode': 'permutation',
            'zeta_override': 0.5,
        })

        assert run.output_directory == temp_dir / "elsewhere"
        assert run.seed == 11
        assert run.simulation.seed == 11
        assert run.method == Method.SCM
        assert run.inference_mode == InferenceMode.PERMUTATION
        assert run.estimator_settings.zeta_override == 0.5

    def test_include_treated_can_be_switched_off(self, config_file):
        config = Config(str(config_file))
        config.config.set('RUN', 'include_treated', 'false')
        assert config.run_config().include_treated is False

    def test_none_overrides_ignored(self, config_file):
        run = Config(str(config_file)).run_config({'seed': None, 'method': None})
        assert run.seed == 7
        assert run.method == Method.SDID

    def test_invalid_method(self, config_file):
        config = Config(str(config_file))
        config.config.set('RUN', 'method', 'lasso')
        with pytest.raises(ConfigError):
            config.run_config()

    def test_invalid_inference(self, config_file):
        config = Config(str(config_file))
        config.config.set('RUN', 'inference', 'bootstrap')
        with pytest.raises(ConfigError):
            config.run_config()

    def test_explicit_donor_list(self, temp_dir):
        path = write_config(temp_dir / "c.ini", {"DONORS": {"donors": "Saginaw, Pontiac"}})
        run = Config(str(path)).run_config()
        assert run.donors == ("Saginaw", "Pontiac")
        assert run.criteria is None

    def test_donors_and_criteria_conflict(self, temp_dir):
        path = write_config(temp_dir / "c.ini", {"DONORS": {"donors": "Saginaw", "population_min": 5000}})
        with pytest.raises(ConfigError):
            Config(str(path)).run_config()

    def test_named_pools_and_grid(self, config_file):
        config = Config(str(config_file))
        config.config.add_section('DONOR_POOL populous')
        config.config.set('DONOR_POOL populous', 'top_n_by_population', '10')
        config.config.add_section('GRID')
        config.config.set('GRID', 'donor_pools', 'default, populous')
        config.config.set('GRID', 'pre_period_starts', 'all, 2022')
        config.config.set('GRID', 'covariates', 'false, true')

        run = config.run_config()
        assert set(run.donor_pools) == {'default', 'populous'}
        assert run.donor_pools['populous'].criteria.top_n_by_population == 10
        assert run.donor_pools['default'].criteria == run.criteria
        assert run.grid.donor_pools == ['default', 'populous']
        assert run.grid.pre_period_starts == [None, 2022]
        assert run.grid.covariates == [False, True]

    def test_grid_bad_start(self, config_file):
        config = Config(str(config_file))
        config.config.add_section('GRID')
        config.config.set('GRID', 'pre_period_starts', 'all, early')
        with pytest.raises(ConfigError):
            config.run_config()

    def test_outcome_sections(self, config_file, temp_dir):
        config = Config(str(config_file))
        config.config.add_section('OUTCOME births')
        config.config.set('OUTCOME births', 'panel_path', str(temp_dir / "births.csv"))
        config.config.set('OUTCOME births', 'outcome_kind', 'count')

        run = config.run_config()
        assert run.outcomes['births'].panel_path == temp_dir / "births.csv"
        assert run.outcomes['births'].panel_schema.outcome_kind == OutcomeKind.COUNT

    def test_simulation_section(self, config_file):
        config = Config(str(config_file))
        config.config.add_section('SIMULATION')
        config.config.set('SIMULATION', 'n_donors', '40')
        config.config.set('SIMULATION', 'true_tau', '-5')
        config.config.set('SIMULATION', 'n_reps', '50')
        config.config.set('SIMULATION', 'inference', 'false')

        run = config.run_config()
        assert run.simulation.n_donors == 40
        assert run.simulation.true_tau == -5.0
        assert run.n_reps == 50
        assert run.simulate_inference is False

    def test_require_panel(self, temp_dir):
        path = write_config(temp_dir / "c.ini", {"RUN": {"method": "did"}})
        run = Config(str(path)).run_config()
        with pytest.raises(ConfigError):
            run.require_panel()
