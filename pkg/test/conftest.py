import configparser
import tempfile
from pathlib import Path

import numpy as np
import pytest

from src.core.data.panel_store import OutcomeKind, load_characteristics, panel_from_matrix, panel_to_csv

FIXTURES = Path(__file__).parent / "fixtures"

FLINT = "Flint"
FLINT_RATES = (22.7, 21.7, 20.8, 15.5)
PERIODS = (2021, 2022, 2023, 2024)
TREATMENT_START = 2024

# Cities meeting the pre-specified donor criteria after exclusions
PUBLISHED_DONORS = (
    "Albion", "Benton Harbor", "Benton Township", "Bridgeport Township", "Buena Vista Township",
    "Eastpointe", "Ecorse", "Harper Woods", "Highland Park", "Inkster", "Jackson", "Lansing",
    "Muskegon", "Muskegon Heights", "Pontiac", "River Rouge", "Saginaw", "St. Louis", "Wayne",
    "Ypsilanti", "Ypsilanti Township",
)
EXCLUSIONS = ("Beecher", "Flint Township", "Kalamazoo")

PUBLISHED_UNIT_WEIGHTS = {
    "Albion": 0.04651482,
    "Benton Harbor": 0.07667844,
    "Benton Township": 0.03837185,
    "Bridgeport Township": 0.05365189,
    "Buena Vista Township": 0.04815389,
    "Eastpointe": 0.05666218,
    "Ecorse": 0.0606078,
    "Harper Woods": 0.04317521,
    "Highland Park": 0.02471664,
    "Inkster": 0.0159125,
    "Jackson": 0.04504911,
    "Lansing": 0.04650577,
    "Muskegon": 0.03825902,
    "Muskegon Heights": 0.03533298,
    "Pontiac": 0.03159653,
    "River Rouge": 0.07526972,
    "Saginaw": 0.05019247,
    "St. Louis": 0.06235585,
    "Wayne": 0.04630271,
    "Ypsilanti": 0.04773139,
    "Ypsilanti Township": 0.05695925,
}
PUBLISHED_TIME_WEIGHTS = {2021: 0.43497877, 2022: 0.14212496, 2023: 0.42289627}


@pytest.fixture
def temp_dir():
    """Create temporary directory for testing"""
    with tempfile.TemporaryDirectory() as temp_dir:
        yield Path(temp_dir)


@pytest.fixture
def characteristics_path():
    return FIXTURES / "michigan_characteristics.csv"


@pytest.fixture
def characteristics(characteristics_path):
    return load_characteristics(characteristics_path)


def make_flint_panel(seed: int = 2024):
    """Flint at its published yearly rates plus 21 donors with synthetic rates"""
    rng = np.random.default_rng(seed)
    base = rng.uniform(14.0, 26.0, size=len(PUBLISHED_DONORS))
    trend = np.array([0.0, 0.3, 0.6, 1.1])
    donors = base[:, None] + trend[None, :] + rng.normal(0.0, 0.8, size=(len(PUBLISHED_DONORS), len(PERIODS)))
    rows = {FLINT: np.array(FLINT_RATES)}
    rows.update({name: donors[i] for i, name in enumerate(PUBLISHED_DONORS)})
    units = sorted(rows)
    return panel_from_matrix(np.array([rows[u] for u in units]), treated_unit=FLINT,
                             treatment_start=TREATMENT_START, units=units, periods=PERIODS,
                             outcome_kind=OutcomeKind.RATE)


@pytest.fixture
def flint_panel():
    return make_flint_panel()


@pytest.fixture
def flint_panel_csv(temp_dir, flint_panel):
    path = temp_dir / "panel.csv"
    panel_to_csv(flint_panel, path)
    return path


def write_config(path: Path, sections: dict) -> Path:
    """Write an INI file from ``{section: {key: value}}``"""
    parser = configparser.ConfigParser()
    for section, values in sections.items():
        parser.add_section(section)
        for key, value in values.items():
            parser.set(section, key, str(value))
    with open(path, "w", encoding="utf-8") as f:
        parser.write(f)
    return path


@pytest.fixture
def config_file(temp_dir, flint_panel_csv, characteristics_path):
    """Run configuration for the Flint fixture with the pre-specified donor criteria"""
    return write_config(temp_dir / "test_config.ini", {
        "RUN": {"method": "sdid", "inference": "gaussian", "seed": 7},
        "DATA": {
            "panel_path": flint_panel_csv,
            "characteristics_path": characteristics_path,
            "treated_unit": FLINT,
            "treatment_start": TREATMENT_START,
            "outcome_kind": "rate",
        },
        "DONORS": {
            "population_min": 5000,
            "population_max": 125000,
            "poverty_rate_min": 15,
            "pct_nh_black_min": 20,
            "exclusions": ", ".join(EXCLUSIONS),
        },
        "OUTPUT": {"output_directory": temp_dir / "output"},
        "LOGGING": {
            "log_level": "DEBUG",
            "log_file": temp_dir / "logs" / "test.log",
            "log_max_size_mb": 1,
            "log_backup_count": 2,
        },
    })
