"""
Donor pool construction from a characteristics table.

Two modes: threshold criteria (population band, minimum poverty rate, minimum
non-Hispanic Black share) or the n most populous units. Exclusions are caller data.
"""
import logging
from pathlib import Path
from typing import FrozenSet, List, Optional, Sequence, TextIO, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, model_validator

from ..errors import EmptyDonorPool, InvalidCriteria, InvalidExclusion, UnknownUnit
from .panel_store import CharacteristicsTable

logger = logging.getLogger(__name__)

_THRESHOLD_FIELDS = ("population_min", "population_max", "poverty_rate_min", "pct_nh_black_min")


class DonorCriteria(BaseModel):
    """Donor eligibility rules; exactly one of threshold mode or top-n mode is active"""

    model_config = ConfigDict(frozen=True)

    population_min: Optional[float] = None
    population_max: Optional[float] = None
    poverty_rate_min: Optional[float] = None
    pct_nh_black_min: Optional[float] = None
    exclusions: FrozenSet[str] = Field(default_factory=frozenset)
    top_n_by_population: Optional[int] = None
    exclude_name_contains: Tuple[str, ...] = ()

    @model_validator(mode="after")
    def _check_mode(self) -> "DonorCriteria":
        thresholds = [getattr(self, name) for name in _THRESHOLD_FIELDS]
        has_thresholds = any(v is not None for v in thresholds)
        if has_thresholds == (self.top_n_by_population is not None):
            raise ValueError("Exactly one of threshold mode or top_n_by_population must be set")
        if self.top_n_by_population is not None and self.top_n_by_population < 1:
            raise ValueError("top_n_by_population must be at least 1")
        if (self.population_min is not None and self.population_max is not None
                and self.population_min > self.population_max):
            raise ValueError("population_min must not exceed population_max")
        for name in ("poverty_rate_min", "pct_nh_black_min"):
            value = getattr(self, name)
            if value is not None and not 0 <= value <= 100:
                raise ValueError(f"{name} must lie in [0, 100]")
        return self

    @property
    def mode(self) -> str:
        return "top_n" if self.top_n_by_population is not None else "threshold"

    @classmethod
    def pre_specified(cls, exclusions: Sequence[str] = ()) -> "DonorCriteria":
        """Mid-sized, high-poverty, high Black-share cities"""
        return cls(population_min=5000, population_max=125000, poverty_rate_min=15.0,
                   pct_nh_black_min=20.0, exclusions=frozenset(exclusions))

    @classmethod
    def most_populous(cls, n: int, exclusions: Sequence[str] = (),
                      exclude_name_contains: Sequence[str] = ("Township",)) -> "DonorCriteria":
        return cls(top_n_by_population=n, exclusions=frozenset(exclusions),
                   exclude_name_contains=tuple(exclude_name_contains))


def _name_excluded(unit: str, patterns: Sequence[str]) -> bool:
    return any(p and p in unit for p in patterns)


def filter_donors(chars: CharacteristicsTable, criteria: DonorCriteria, treated_unit: str) -> List[str]:
    """
    Return the donor list for ``treated_unit`` under ``criteria``.

    Threshold comparisons are inclusive. Top-n mode counts the treated unit toward n when it
    ranks among the most populous, then removes it. Output is sorted by unit id.
    """
    if treated_unit not in chars:
        raise UnknownUnit(f"Treated unit {treated_unit!r} not in characteristics table", unit=treated_unit)
    if treated_unit in criteria.exclusions:
        raise InvalidExclusion(f"Treated unit {treated_unit!r} cannot be in the exclusion list",
                               unit=treated_unit)

    frame = chars.frame
    candidates = frame[[
        u not in criteria.exclusions and not _name_excluded(u, criteria.exclude_name_contains)
        for u in frame.index
    ]]

    if criteria.mode == "threshold":
        mask = pd.Series(True, index=candidates.index)
        bounds = (
            ("total_population", criteria.population_min, np.greater_equal),
            ("total_population", criteria.population_max, np.less_equal),
            ("poverty_rate", criteria.poverty_rate_min, np.greater_equal),
            ("pct_nh_black", criteria.pct_nh_black_min, np.greater_equal),
        )
        for column, bound, op in bounds:
            if bound is None:
                continue
            values = chars.column(column).reindex(candidates.index).astype(float)
            # NaN never satisfies a predicate
            mask &= op(values, bound).fillna(False).astype(bool)
        donors = [u for u in candidates.index[mask.to_numpy()] if u != treated_unit]
    else:
        population = chars.column("total_population").reindex(candidates.index).astype(float)
        ranked = sorted(
            (u for u in candidates.index if not np.isnan(population[u])),
            key=lambda u: (-population[u], u),
        )
        donors = [u for u in ranked[: criteria.top_n_by_population] if u != treated_unit]

    donors = sorted(set(donors))
    if not donors:
        raise EmptyDonorPool(f"No donor satisfies the {criteria.mode} criteria")
    logger.info(f"Donor pool ({criteria.mode} mode) selected {len(donors)} units")
    return donors


def pool_summary(chars: CharacteristicsTable, donors: Sequence[str]) -> pd.DataFrame:
    """Unweighted mean and median of each numeric column across donors (rows: mean, median)"""
    if not donors:
        raise EmptyDonorPool("Cannot summarize an empty donor pool")
    missing = [d for d in donors if d not in chars]
    if missing:
        raise UnknownUnit(f"Donors not in characteristics table: {missing}", unit=missing[0])
    subset = chars.frame.loc[list(donors), chars.numeric_columns].astype(float)
    return pd.DataFrame({"mean": subset.mean(axis=0), "median": subset.median(axis=0)}).T


def write_donor_list(donors: Sequence[str], dest: Optional[Union[str, Path, TextIO]] = None) -> Optional[str]:
    return pd.DataFrame({"unit": list(donors)}).to_csv(dest, index=False, lineterminator="\n")


def criteria_from_mapping(values: dict) -> DonorCriteria:
    """Build criteria from config-style string values"""
    try:
        kwargs = dict(values)
        if "exclusions" in kwargs and isinstance(kwargs["exclusions"], str):
            kwargs["exclusions"] = frozenset(s.strip() for s in kwargs["exclusions"].split(",") if s.strip())
        if "exclude_name_contains" in kwargs and isinstance(kwargs["exclude_name_contains"], str):
            kwargs["exclude_name_contains"] = tuple(
                s.strip() for s in kwargs["exclude_name_contains"].split(",") if s.strip())
        return DonorCriteria(**kwargs)
    except ValueError as e:
        raise InvalidCriteria(f"Invalid donor criteria: {e}")
