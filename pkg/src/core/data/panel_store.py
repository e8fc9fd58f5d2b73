"""
Panel data model, CSV ingestion and validation.

A panel is a balanced unit x period outcome matrix with exactly one treated unit and
one treatment start period. Rates are percentages in [0, 100].
"""
import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Dict, List, Optional, Sequence, TextIO, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field

from ..errors import (
    DataValidationError,
    DivisionByZero,
    DuplicateCell,
    IncompleteCohort,
    NoPostPeriod,
    NoPrePeriod,
    PanelValidationError,
    UnbalancedPanel,
    UnknownUnit,
)

logger = logging.getLogger(__name__)

CsvSource = Union[str, Path, TextIO]

CHARACTERISTIC_PERCENT_COLUMNS = (
    "poverty_rate",
    "pct_nh_black",
    "pct_hispanic",
    "pct_less_than_hs",
    "pct_female_headed",
    "pct_renter",
    "pct_housing_burdened",
)


class OutcomeKind(str, Enum):
    RATE = "rate"
    COUNT = "count"
    # unrestricted real values: residualized or simulated outcomes
    LEVEL = "level"


class PanelSchema(BaseModel):
    """Column mapping for long-format panel CSV files"""

    unit: str = "unit"
    period: str = "period"
    outcome: Optional[str] = "outcome"
    numerator: Optional[str] = None
    denominator: Optional[str] = None
    outcome_kind: OutcomeKind = OutcomeKind.RATE

    @property
    def uses_counts(self) -> bool:
        return self.numerator is not None and self.denominator is not None


class TreatmentAssignment(BaseModel):
    treated_unit: str
    treatment_start: int
    last_complete_period: Optional[int] = None


class ValidationIssue(BaseModel):
    code: str
    unit: Optional[str] = None
    period: Optional[int] = None
    message: str


class ValidationReport(BaseModel):
    errors: List[ValidationIssue] = Field(default_factory=list)
    warnings: List[ValidationIssue] = Field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.errors

    def codes(self) -> List[str]:
        return [issue.code for issue in self.errors]


@dataclass(frozen=True, eq=False)
class Panel:
    """Balanced unit x period outcome panel with a single treated unit"""

    units: Tuple[str, ...]
    periods: Tuple[int, ...]
    outcomes: np.ndarray
    treated_unit: str
    treatment_start: int
    outcome_kind: OutcomeKind = OutcomeKind.RATE
    notes: Tuple[str, ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        matrix = np.array(self.outcomes, dtype=np.float64, copy=True)
        if matrix.shape != (len(self.units), len(self.periods)):
            raise DataValidationError(
                f"Outcome matrix shape {matrix.shape} does not match "
                f"{len(self.units)} units x {len(self.periods)} periods"
            )
        matrix.setflags(write=False)
        object.__setattr__(self, "outcomes", matrix)
        object.__setattr__(self, "units", tuple(str(u) for u in self.units))
        object.__setattr__(self, "periods", tuple(int(p) for p in self.periods))
        object.__setattr__(self, "outcome_kind", OutcomeKind(self.outcome_kind))
        object.__setattr__(self, "notes", tuple(self.notes))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Panel):
            return NotImplemented
        return (
            self.units == other.units
            and self.periods == other.periods
            and self.treated_unit == other.treated_unit
            and self.treatment_start == other.treatment_start
            and self.outcome_kind == other.outcome_kind
            and np.array_equal(self.outcomes, other.outcomes, equal_nan=True)
        )

    @property
    def treated_index(self) -> int:
        try:
            return self.units.index(self.treated_unit)
        except ValueError:
            raise UnknownUnit(f"Treated unit {self.treated_unit!r} not in panel", unit=self.treated_unit)

    @property
    def donors(self) -> Tuple[str, ...]:
        return tuple(u for u in self.units if u != self.treated_unit)

    @property
    def pre_periods(self) -> Tuple[int, ...]:
        return tuple(p for p in self.periods if p < self.treatment_start)

    @property
    def post_periods(self) -> Tuple[int, ...]:
        return tuple(p for p in self.periods if p >= self.treatment_start)

    @property
    def pre_mask(self) -> np.ndarray:
        return np.array([p < self.treatment_start for p in self.periods])

    @property
    def treated_series(self) -> np.ndarray:
        return self.outcomes[self.treated_index]

    @property
    def donor_matrix(self) -> np.ndarray:
        """Donor outcomes, rows = donors (panel order), columns = periods"""
        mask = np.array([u != self.treated_unit for u in self.units])
        return self.outcomes[mask]

    @property
    def outcome_scale(self) -> float:
        finite = self.outcomes[np.isfinite(self.outcomes)]
        return 1.0 + (float(np.max(np.abs(finite))) if finite.size else 0.0)

    def row(self, unit: str) -> np.ndarray:
        try:
            return self.outcomes[self.units.index(unit)]
        except ValueError:
            raise UnknownUnit(f"Unit {unit!r} not in panel", unit=unit)

    def with_outcomes(self, outcomes: np.ndarray, outcome_kind: Optional[OutcomeKind] = None,
                      notes: Sequence[str] = ()) -> "Panel":
        return replace(
            self,
            outcomes=outcomes,
            outcome_kind=outcome_kind or self.outcome_kind,
            notes=self.notes + tuple(notes),
        )

    def reassign(self, treated_unit: str) -> "Panel":
        """Same data with a different unit labelled as treated"""
        if treated_unit not in self.units:
            raise UnknownUnit(f"Unit {treated_unit!r} not in panel", unit=treated_unit)
        return replace(self, treated_unit=treated_unit)

    def keep_units(self, units: Sequence[str]) -> "Panel":
        """Restrict to the given units (treated unit always kept), preserving sorted order"""
        wanted = set(units) | {self.treated_unit}
        missing = sorted(wanted - set(self.units))
        if missing:
            raise UnknownUnit(f"Units not in panel: {missing}", unit=missing[0])
        idx = [i for i, u in enumerate(self.units) if u in wanted]
        return replace(self, units=tuple(self.units[i] for i in idx), outcomes=self.outcomes[idx])

    def drop_unit(self, unit: str) -> "Panel":
        if unit not in self.units:
            raise UnknownUnit(f"Unit {unit!r} not in panel", unit=unit)
        idx = [i for i, u in enumerate(self.units) if u != unit]
        return replace(self, units=tuple(self.units[i] for i in idx), outcomes=self.outcomes[idx])

    def restrict_periods(self, first_period: int) -> "Panel":
        """Drop periods before ``first_period`` (shorter pre-intervention window)"""
        idx = [j for j, p in enumerate(self.periods) if p >= first_period]
        return replace(self, periods=tuple(self.periods[j] for j in idx), outcomes=self.outcomes[:, idx])


@dataclass(frozen=True, eq=False)
class CharacteristicsTable:
    """Per-unit covariates indexed by unit identifier"""

    frame: pd.DataFrame

    def __post_init__(self) -> None:
        frame = self.frame.copy()
        frame.index = frame.index.astype(str)
        object.__setattr__(self, "frame", frame)

    @property
    def units(self) -> List[str]:
        return list(self.frame.index)

    @property
    def numeric_columns(self) -> List[str]:
        return [c for c in self.frame.columns if pd.api.types.is_numeric_dtype(self.frame[c])]

    def __contains__(self, unit: object) -> bool:
        return unit in self.frame.index

    def column(self, name: str) -> pd.Series:
        if name not in self.frame.columns:
            raise DataValidationError(f"Characteristics table has no column {name!r}")
        return self.frame[name]

    def validate(self) -> ValidationReport:
        report = ValidationReport()
        duplicated = self.frame.index[self.frame.index.duplicated()]
        for unit in sorted(set(duplicated)):
            report.errors.append(ValidationIssue(code="DuplicateUnit", unit=unit,
                                                 message=f"Unit {unit!r} appears more than once"))
        for col in CHARACTERISTIC_PERCENT_COLUMNS:
            if col not in self.frame.columns:
                continue
            values = self.frame[col]
            bad = values[(values < 0) | (values > 100)]
            for unit, value in bad.items():
                report.errors.append(ValidationIssue(code="PercentOutOfRange", unit=str(unit),
                                                     message=f"{col}={value} outside [0, 100]"))
        if "total_population" in self.frame.columns:
            bad = self.frame["total_population"][self.frame["total_population"] <= 0]
            for unit, value in bad.items():
                report.errors.append(ValidationIssue(code="NonPositivePopulation", unit=str(unit),
                                                     message=f"total_population={value} is not positive"))
        return report


def read_csv_source(source: CsvSource, **kwargs) -> pd.DataFrame:
    if isinstance(source, (str, Path)):
        return pd.read_csv(source, encoding="utf-8", **kwargs)
    return pd.read_csv(source, **kwargs)


def _parse_periods(values: pd.Series) -> pd.Series:
    try:
        parsed = pd.to_numeric(values.astype(str).str.strip(), errors="raise")
    except (ValueError, TypeError) as e:
        raise DataValidationError(f"Period column is not a base-10 integer: {e}")
    if not np.all(np.equal(np.mod(parsed, 1), 0)):
        raise DataValidationError("Period column contains non-integer values")
    return parsed.astype(np.int64)


def load_panel(source: CsvSource, schema: Optional[PanelSchema] = None,
               assignment: Optional[TreatmentAssignment] = None) -> Panel:
    """
    Load a long-format panel CSV into a balanced Panel.

    Args:
        source: path or open text stream
        schema: column mapping; numerator/denominator columns produce percentage rates
        assignment: treated unit, treatment start and optional last complete cohort

    Returns:
        Validated Panel with units and periods sorted
    """
    schema = schema or PanelSchema()
    if assignment is None:
        raise DataValidationError("A treatment assignment is required to load a panel")

    frame = read_csv_source(source, dtype={schema.unit: str})
    needed = [schema.unit, schema.period]
    needed += [schema.numerator, schema.denominator] if schema.uses_counts else [schema.outcome]
    missing_cols = [c for c in needed if c not in frame.columns]
    if missing_cols:
        raise DataValidationError(f"Panel CSV is missing columns: {missing_cols}")

    frame = frame[needed].copy()
    frame[schema.unit] = frame[schema.unit].astype(str).str.strip()
    frame[schema.period] = _parse_periods(frame[schema.period])

    if assignment.last_complete_period is not None:
        late = frame[frame[schema.period] > assignment.last_complete_period]
        if not late.empty:
            row = late.iloc[0]
            raise IncompleteCohort(
                f"Cohort {row[schema.period]} is not fully observed "
                f"(last complete period {assignment.last_complete_period})",
                unit=row[schema.unit], period=int(row[schema.period]),
            )

    dupes = frame[frame.duplicated([schema.unit, schema.period], keep=False)]
    if not dupes.empty:
        row = dupes.iloc[0]
        raise DuplicateCell(f"Duplicate row for ({row[schema.unit]}, {row[schema.period]})",
                            unit=row[schema.unit], period=int(row[schema.period]))

    if schema.uses_counts:
        num = pd.to_numeric(frame[schema.numerator], errors="coerce").astype(float)
        den = pd.to_numeric(frame[schema.denominator], errors="coerce").astype(float)
        zero = frame[den == 0]
        if not zero.empty:
            row = zero.iloc[0]
            raise DivisionByZero(
                f"Denominator is zero for ({row[schema.unit]}, {row[schema.period]})",
                unit=row[schema.unit], period=int(row[schema.period]),
            )
        frame["_value"] = 100.0 * num / den
        kind = OutcomeKind.RATE
    else:
        frame["_value"] = pd.to_numeric(frame[schema.outcome], errors="coerce").astype(float)
        kind = schema.outcome_kind

    units = sorted(frame[schema.unit].unique())
    periods = sorted(int(p) for p in frame[schema.period].unique())
    if assignment.treated_unit not in units:
        raise UnknownUnit(f"Treated unit {assignment.treated_unit!r} not found in panel data",
                          unit=assignment.treated_unit)

    wide = frame.pivot(index=schema.unit, columns=schema.period, values="_value")
    wide = wide.reindex(index=units, columns=periods)
    present = set(zip(frame[schema.unit], frame[schema.period]))
    absent = [(u, p) for u in units for p in periods if (u, p) not in present]
    if absent:
        unit, period = absent[0]
        raise UnbalancedPanel(
            f"Panel is unbalanced: {len(absent)} missing cell(s), first ({unit}, {period})",
            unit=unit, period=period,
        )
    blank = np.argwhere(wide.isna().to_numpy())
    if blank.size:
        unit, period = units[int(blank[0][0])], periods[int(blank[0][1])]
        raise UnbalancedPanel(
            f"Missing or non-numeric outcome for ({unit}, {period}); {len(blank)} such cell(s)",
            unit=unit, period=period,
        )

    panel = Panel(
        units=tuple(units),
        periods=tuple(periods),
        outcomes=wide.to_numpy(dtype=np.float64),
        treated_unit=assignment.treated_unit,
        treatment_start=assignment.treatment_start,
        outcome_kind=kind,
    )
    report = validate_panel(panel)
    if not report.ok:
        first = report.errors[0]
        raise PanelValidationError(f"Panel failed validation: {first.message}", report=report,
                                   unit=first.unit, period=first.period)
    for issue in report.warnings:
        logger.warning(f"Panel warning [{issue.code}]: {issue.message}")
    logger.info(f"Loaded panel with {len(units)} units x {len(periods)} periods "
                f"(treated={assignment.treated_unit}, start={assignment.treatment_start})")
    return panel


def validate_panel(panel: Panel) -> ValidationReport:
    """List every violated panel invariant; errors are data, never raised"""
    report = ValidationReport()

    if len(set(panel.units)) != len(panel.units):
        report.errors.append(ValidationIssue(code="DuplicateUnit", message="Unit identifiers repeat"))
    if len(set(panel.periods)) != len(panel.periods):
        report.errors.append(ValidationIssue(code="DuplicatePeriod", message="Periods repeat"))

    if panel.treated_unit not in panel.units:
        report.errors.append(ValidationIssue(
            code="UnknownUnit", unit=panel.treated_unit,
            message=f"Treated unit {panel.treated_unit!r} is not a panel unit"))

    if not panel.periods or panel.treatment_start <= min(panel.periods):
        report.errors.append(ValidationIssue(
            code="NoPrePeriod", period=panel.treatment_start,
            message=f"Treatment start {panel.treatment_start} leaves no pre-intervention period"))
    elif panel.treatment_start > max(panel.periods):
        report.warnings.append(ValidationIssue(
            code="NoPostPeriod", period=panel.treatment_start,
            message=f"Treatment start {panel.treatment_start} is after the last period"))

    for i, unit in enumerate(panel.units):
        for j, period in enumerate(panel.periods):
            value = panel.outcomes[i, j]
            if np.isnan(value):
                report.errors.append(ValidationIssue(code="UnbalancedPanel", unit=unit, period=period,
                                                     message=f"Missing outcome for ({unit}, {period})"))
            elif not np.isfinite(value):
                report.errors.append(ValidationIssue(code="NonFiniteValue", unit=unit, period=period,
                                                     message=f"Non-finite outcome for ({unit}, {period})"))
            elif panel.outcome_kind == OutcomeKind.RATE and not 0.0 <= value <= 100.0:
                report.errors.append(ValidationIssue(code="RateOutOfRange", unit=unit, period=period,
                                                     message=f"Rate {value} outside [0, 100] for ({unit}, {period})"))
            elif panel.outcome_kind == OutcomeKind.COUNT and value < 0:
                report.errors.append(ValidationIssue(code="NegativeCount", unit=unit, period=period,
                                                     message=f"Count {value} is negative for ({unit}, {period})"))
    return report


def ensure_valid(panel: Panel) -> Panel:
    report = validate_panel(panel)
    if not report.ok:
        first = report.errors[0]
        raise PanelValidationError(f"Panel failed validation: {first.message}", report=report,
                                   unit=first.unit, period=first.period)
    return panel


def pre_post_split(panel: Panel) -> Tuple[List[int], List[int]]:
    """Split periods at the treatment start: pre = periods < start, post = periods >= start"""
    pre = list(panel.pre_periods)
    post = list(panel.post_periods)
    if not pre:
        raise NoPrePeriod(f"No period before treatment start {panel.treatment_start}",
                          period=panel.treatment_start)
    if not post:
        raise NoPostPeriod(f"No period at or after treatment start {panel.treatment_start}",
                           period=panel.treatment_start)
    return pre, post


def panel_to_frame(panel: Panel) -> pd.DataFrame:
    rows = [
        {"unit": unit, "period": period, "outcome": panel.outcomes[i, j]}
        for i, unit in enumerate(panel.units)
        for j, period in enumerate(panel.periods)
    ]
    return pd.DataFrame(rows, columns=["unit", "period", "outcome"])


def panel_to_csv(panel: Panel, dest: Optional[Union[str, Path, TextIO]] = None) -> Optional[str]:
    """Write long-format ``unit,period,outcome``; floats keep full precision for exact reload"""
    return panel_to_frame(panel).to_csv(dest, index=False, float_format="%.17g", lineterminator="\n")


def panel_from_matrix(outcomes: np.ndarray, treated_unit: str, treatment_start: int,
                      units: Optional[Sequence[str]] = None,
                      periods: Optional[Sequence[int]] = None,
                      outcome_kind: OutcomeKind = OutcomeKind.LEVEL) -> Panel:
    """Build a panel directly from a unit x period matrix (simulation and tests)"""
    outcomes = np.asarray(outcomes, dtype=np.float64)
    n_units, n_periods = outcomes.shape
    units = tuple(units) if units is not None else tuple(f"u{i:03d}" for i in range(n_units))
    periods = tuple(periods) if periods is not None else tuple(range(1, n_periods + 1))
    return Panel(units=units, periods=periods, outcomes=outcomes, treated_unit=treated_unit,
                 treatment_start=treatment_start, outcome_kind=outcome_kind)


def load_characteristics(source: CsvSource, unit_column: str = "unit") -> CharacteristicsTable:
    """Load ``unit,<column>...`` characteristics; raises on duplicate keys or out-of-range values"""
    frame = read_csv_source(source, dtype={unit_column: str})
    if unit_column not in frame.columns:
        raise DataValidationError(f"Characteristics CSV has no {unit_column!r} column")
    frame[unit_column] = frame[unit_column].astype(str).str.strip()
    table = CharacteristicsTable(frame.set_index(unit_column))
    report = table.validate()
    if not report.ok:
        first = report.errors[0]
        raise PanelValidationError(f"Characteristics table failed validation: {first.message}",
                                   report=report, unit=first.unit)
    logger.info(f"Loaded characteristics for {len(table.units)} units")
    return table


def characteristics_from_records(records: Dict[str, Dict[str, float]]) -> CharacteristicsTable:
    frame = pd.DataFrame.from_dict(records, orient="index")
    frame.index.name = "unit"
    return CharacteristicsTable(frame)
