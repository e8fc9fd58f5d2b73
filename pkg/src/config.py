import configparser
import os
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

from pydantic import BaseModel, Field, ValidationError

from src.core.analysis.estimators import EstimatorSettings, Method
from src.core.analysis.inference import InferenceMode
from src.core.analysis.sensitivity import DonorPoolVariant
from src.core.data.donor_pool import DonorCriteria, criteria_from_mapping
from src.core.data.panel_store import OutcomeKind, PanelSchema, TreatmentAssignment
from src.core.errors import ConfigError
from src.core.simulation.simgen import FactorModelSpec

CRITERIA_KEYS = (
    "population_min",
    "population_max",
    "poverty_rate_min",
    "pct_nh_black_min",
    "exclusions",
    "top_n_by_population",
    "exclude_name_contains",
)

SIMULATION_KEYS = tuple(FactorModelSpec.model_fields)

PRIMARY_OUTCOME = "primary"


def _split(value: Optional[str]) -> List[str]:
    if not value:
        return []
    return [item.strip() for item in value.split(",") if item.strip()]


def _optional(value: Optional[str]) -> Optional[str]:
    return value if value not in (None, "") else None


class OutcomeSource(BaseModel):
    """Where one outcome's panel comes from"""

    panel_path: Path
    panel_schema: PanelSchema = Field(default_factory=PanelSchema)


class GridAxes(BaseModel):
    outcomes: List[str] = Field(default_factory=lambda: [PRIMARY_OUTCOME])
    donor_pools: List[str] = Field(default_factory=lambda: ["default"])
    pre_period_starts: List[Optional[int]] = Field(default_factory=lambda: [None])
    covariates: List[bool] = Field(default_factory=lambda: [False])


class RunConfig(BaseModel):
    """Everything one CLI invocation needs, after flag overrides"""

    panel_path: Optional[Path] = None
    characteristics_path: Optional[Path] = None
    reference_path: Optional[Path] = None
    panel_schema: PanelSchema = Field(default_factory=PanelSchema)
    assignment: Optional[TreatmentAssignment] = None
    pre_period_start: Optional[int] = None
    outcomes: Dict[str, OutcomeSource] = Field(default_factory=dict)

    method: Method = Method.SDID
    inference_mode: InferenceMode = InferenceMode.GAUSSIAN
    zeta_override: Optional[float] = Field(default=None, ge=0)
    scm_intercept: bool = False
    seed: int = Field(default=0, ge=0)
    include_treated: bool = True
    leave_treated_out: bool = True
    max_workers: int = Field(default=1, ge=1)
    render_figures: bool = False

    donors: Optional[Tuple[str, ...]] = None
    criteria: Optional[DonorCriteria] = None
    donor_pools: Dict[str, DonorPoolVariant] = Field(default_factory=dict)
    covariates: List[str] = Field(default_factory=list)

    grid: GridAxes = Field(default_factory=GridAxes)
    simulation: FactorModelSpec = Field(default_factory=FactorModelSpec)
    n_reps: int = Field(default=500, ge=1)
    simulate_inference: bool = True

    output_directory: Path = Path("./output")

    @property
    def estimator_settings(self) -> EstimatorSettings:
        return EstimatorSettings(method=self.method, zeta_override=self.zeta_override,
                                 scm_intercept=self.scm_intercept)

    def require_panel(self) -> Tuple[Path, TreatmentAssignment]:
        if self.panel_path is None:
            raise ConfigError("[DATA] panel_path is required for this command")
        if self.assignment is None:
            raise ConfigError("[DATA] treated_unit and treatment_start are required for this command")
        return self.panel_path, self.assignment


class Config:
    def __init__(self, config_file: str = "config.ini", required: bool = True):
        self.config_file = config_file
        self.config = configparser.ConfigParser()
        self.load_config(required)

    def load_config(self, required: bool = True):
        """Load configuration from file"""
        if not os.path.exists(self.config_file):
            if required:
                raise FileNotFoundError(f"Configuration file {self.config_file} not found")
            return
        self.config.read(self.config_file, encoding="utf-8")

    def get(self, section: str, key: str, fallback: Any = None) -> Any:
        """Get configuration value with fallback"""
        try:
            return self.config.get(section, key)
        except (configparser.NoSectionError, configparser.NoOptionError):
            return fallback

    def getint(self, section: str, key: str, fallback: Optional[int] = 0) -> Optional[int]:
        """Get integer configuration value; a malformed value is a config error"""
        try:
            raw = self.config.get(section, key)
        except (configparser.NoSectionError, configparser.NoOptionError):
            return fallback
        if raw.strip() == "":
            return fallback
        try:
            return int(raw)
        except ValueError:
            raise ConfigError(f"[{section}] {key} must be an integer, got {raw!r}")

    def getboolean(self, section: str, key: str, fallback: bool = False) -> bool:
        """Get boolean configuration value with fallback"""
        try:
            return self.config.getboolean(section, key)
        except (configparser.NoSectionError, configparser.NoOptionError):
            return fallback
        except ValueError:
            raise ConfigError(f"[{section}] {key} must be a boolean")

    def getfloat(self, section: str, key: str, fallback: Optional[float] = 0.0) -> Optional[float]:
        """Get float configuration value; a malformed value is a config error"""
        raw = self.get(section, key)
        if raw is None or raw.strip() == "":
            return fallback
        try:
            return float(raw)
        except ValueError:
            raise ConfigError(f"[{section}] {key} must be a number, got {raw!r}")

    def section_items(self, section: str) -> Dict[str, str]:
        if not self.config.has_section(section):
            return {}
        return {key: value for key, value in self.config.items(section) if value.strip() != ""}

    def sections_with_prefix(self, prefix: str) -> Dict[str, str]:
        """Map ``name`` to section title for sections named ``<prefix> <name>``"""
        return {
            title[len(prefix):].strip(): title
            for title in self.config.sections()
            if title.startswith(prefix + " ")
        }

    # Convenience methods for common configuration sections

    @property
    def logging_config(self) -> Dict[str, Any]:
        """Get logging configuration"""
        return {
            'level': self.get('LOGGING', 'log_level', 'INFO'),
            'file': self.get('LOGGING', 'log_file', './logs/sdid.log'),
            'max_size_mb': self.getint('LOGGING', 'log_max_size_mb', 10),
            'backup_count': self.getint('LOGGING', 'log_backup_count', 5)
        }

    @property
    def output_directory(self) -> Path:
        return Path(self.get('OUTPUT', 'output_directory', './output'))

    def _schema(self, section: str, base: Optional[PanelSchema] = None) -> PanelSchema:
        base = base or PanelSchema()
        return PanelSchema(
            unit=self.get(section, 'unit_column', base.unit),
            period=self.get(section, 'period_column', base.period),
            outcome=_optional(self.get(section, 'outcome_column', base.outcome)),
            numerator=_optional(self.get(section, 'numerator_column', base.numerator)),
            denominator=_optional(self.get(section, 'denominator_column', base.denominator)),
            outcome_kind=OutcomeKind(self.get(section, 'outcome_kind', base.outcome_kind.value)),
        )

    def _assignment(self) -> Optional[TreatmentAssignment]:
        treated = _optional(self.get('DATA', 'treated_unit'))
        start = self.getint('DATA', 'treatment_start', None)
        if treated is None or start is None:
            return None
        return TreatmentAssignment(treated_unit=treated, treatment_start=start,
                                   last_complete_period=self.getint('DATA', 'last_complete_period', None))

    def _pool(self, section: str) -> DonorPoolVariant:
        items = self.section_items(section)
        explicit = _split(items.get('donors'))
        criteria_values = {k: v for k, v in items.items() if k in CRITERIA_KEYS}
        if explicit and criteria_values:
            raise ConfigError(f"[{section}] takes either donors or criteria keys, not both")
        if explicit:
            return DonorPoolVariant(donors=tuple(explicit))
        if criteria_values:
            return DonorPoolVariant(criteria=criteria_from_mapping(criteria_values))
        return DonorPoolVariant()

    def _grid(self) -> GridAxes:
        items = self.section_items('GRID')
        axes: Dict[str, Any] = {}
        if 'outcomes' in items:
            axes['outcomes'] = _split(items['outcomes'])
        if 'donor_pools' in items:
            axes['donor_pools'] = _split(items['donor_pools'])
        if 'pre_period_starts' in items:
            axes['pre_period_starts'] = [None if v.lower() == 'all' else int(v)
                                         for v in _split(items['pre_period_starts'])]
        if 'covariates' in items:
            axes['covariates'] = [configparser.ConfigParser.BOOLEAN_STATES[v.lower()]
                                  for v in _split(items['covariates'])]
        return GridAxes(**axes)

    def _simulation(self, seed: int) -> Tuple[FactorModelSpec, int, bool]:
        items = self.section_items('SIMULATION')
        fields = {k: v for k, v in items.items() if k in SIMULATION_KEYS}
        fields.setdefault('seed', seed)
        return (
            FactorModelSpec(**fields),
            self.getint('SIMULATION', 'n_reps', 500),
            self.getboolean('SIMULATION', 'inference', True),
        )

    def run_config(self, overrides: Optional[Dict[str, Any]] = None) -> RunConfig:
        """
        Build the validated run configuration; non-None ``overrides`` (CLI flags) win over the file.

        Raises:
            ConfigError: for malformed values or failed validation
        """
        overrides = {k: v for k, v in (overrides or {}).items() if v is not None}
        try:
            seed = overrides.get('seed', self.getint('RUN', 'seed', 0))
            schema = self._schema('DATA')
            outcomes = {}
            for name, section in self.sections_with_prefix('OUTCOME').items():
                path = self.get(section, 'panel_path', self.get('DATA', 'panel_path'))
                if not path:
                    raise ConfigError(f"[{section}] needs a panel_path")
                outcomes[name] = OutcomeSource(panel_path=Path(path), panel_schema=self._schema(section, schema))

            pools = {name: self._pool(section) for name, section in self.sections_with_prefix('DONOR_POOL').items()}
            default_pool = self._pool('DONORS')
            pools.setdefault('default', default_pool)
            simulation, n_reps, simulate_inference = self._simulation(seed)
            if 'seed' in overrides:
                simulation = simulation.model_copy(update={'seed': overrides['seed']})

            values: Dict[str, Any] = {
                'panel_path': _optional(self.get('DATA', 'panel_path')),
                'characteristics_path': _optional(self.get('DATA', 'characteristics_path')),
                'reference_path': _optional(self.get('DATA', 'reference_path')),
                'panel_schema': schema,
                'assignment': self._assignment(),
                'pre_period_start': self.getint('DATA', 'pre_period_start', None),
                'outcomes': outcomes,
                'method': self.get('RUN', 'method', Method.SDID.value),
                'inference_mode': InferenceMode.parse(self.get('RUN', 'inference', 'gaussian')),
                'zeta_override': self.getfloat('RUN', 'zeta_override', None),
                'scm_intercept': self.getboolean('RUN', 'scm_intercept', False),
                'seed': seed,
                'include_treated': self.getboolean('RUN', 'include_treated', True),
                'leave_treated_out': self.getboolean('RUN', 'leave_treated_out', True),
                'max_workers': self.getint('RUN', 'max_workers', 1),
                'render_figures': self.getboolean('RUN', 'render_figures', False),
                'donors': default_pool.donors,
                'criteria': default_pool.criteria,
                'donor_pools': pools,
                'covariates': _split(self.get('COVARIATES', 'columns')),
                'grid': self._grid(),
                'simulation': simulation,
                'n_reps': n_reps,
                'simulate_inference': simulate_inference,
                'output_directory': self.output_directory,
            }
            if 'inference_mode' in overrides:
                overrides['inference_mode'] = InferenceMode.parse(overrides['inference_mode'])
            values.update(overrides)
            return RunConfig(**values)
        except (ValidationError, ValueError, KeyError) as e:
            if isinstance(e, ConfigError):
                raise
            raise ConfigError(f"Invalid configuration in {self.config_file}: {e}")


# Global configuration instance
config = Config(required=False)
