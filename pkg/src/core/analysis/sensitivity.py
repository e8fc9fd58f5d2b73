"""
Specification grids: outcome x donor pool x pre-period start x covariate toggle.

Every cell runs one estimate and its placebo inference. Cells are independent; a failing cell
is recorded and the rest still run.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from itertools import product
from typing import Any, Dict, List, Mapping, Optional, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, model_validator

from ..data.donor_pool import DonorCriteria, filter_donors
from ..data.panel_store import CharacteristicsTable, Panel
from ..errors import ConfigError, DegenerateDistribution, ToolkitError, UnknownDonorPool
from .estimators import EstimateResult, EstimatorSettings, Method, estimate, residualize_covariates
from .inference import (
    InferenceMode,
    InferenceResult,
    RmspeRatioTest,
    infer,
    placebo_distribution,
    rmspe_ratio_test,
)

logger = logging.getLogger(__name__)

AS_LOADED = "as_loaded"


class DonorPoolVariant(BaseModel):
    """A named donor pool: criteria, an explicit list, or neither (use the panel's units as loaded)"""

    model_config = ConfigDict(frozen=True)

    criteria: Optional[DonorCriteria] = None
    donors: Optional[Tuple[str, ...]] = None

    @model_validator(mode="after")
    def _one_source(self) -> "DonorPoolVariant":
        if self.criteria is not None and self.donors is not None:
            raise ValueError("A donor pool takes criteria or an explicit list, not both")
        return self


class SpecCell(BaseModel):
    model_config = ConfigDict(frozen=True)

    outcome: str
    donor_pool: str
    pre_period_start: Optional[int] = None
    covariates: bool = False

    @property
    def cell_id(self) -> str:
        start = "all" if self.pre_period_start is None else str(self.pre_period_start)
        return f"{self.outcome}|{self.donor_pool}|{start}|{'cov' if self.covariates else 'nocov'}"


class SpecGrid(BaseModel):
    outcomes: List[str] = Field(default_factory=lambda: ["primary"], min_length=1)
    donor_pools: List[str] = Field(default_factory=lambda: [AS_LOADED], min_length=1)
    pre_period_starts: List[Optional[int]] = Field(default_factory=lambda: [None], min_length=1)
    covariates: List[bool] = Field(default_factory=lambda: [False], min_length=1)
    covariate_columns: List[str] = Field(default_factory=list)
    pools: Dict[str, DonorPoolVariant] = Field(default_factory=dict)
    settings: EstimatorSettings = Field(default_factory=EstimatorSettings)
    inference_mode: InferenceMode = InferenceMode.GAUSSIAN
    include_treated: bool = True
    leave_treated_out: bool = True

    @model_validator(mode="after")
    def _check_axes(self) -> "SpecGrid":
        if any(self.covariates) and not self.covariate_columns:
            raise ValueError("Covariate-adjusted cells need covariate_columns")
        return self

    def cells(self) -> List[SpecCell]:
        cells = [
            SpecCell(outcome=o, donor_pool=d, pre_period_start=s, covariates=c)
            for o, d, s, c in product(self.outcomes, self.donor_pools, self.pre_period_starts, self.covariates)
        ]
        return sorted({c.cell_id: c for c in cells}.values(), key=lambda c: c.cell_id)

    def resolve_pool(self, name: str) -> DonorPoolVariant:
        if name in self.pools:
            return self.pools[name]
        if name == AS_LOADED:
            return DonorPoolVariant()
        raise UnknownDonorPool(f"Grid references unknown donor pool {name!r}")


@dataclass(frozen=True)
class CellResult:
    cell: SpecCell
    estimate: EstimateResult
    inference: Optional[InferenceResult] = None
    rmspe: Optional[RmspeRatioTest] = None
    notes: Tuple[str, ...] = ()

    @property
    def significant(self) -> bool:
        return self.inference is not None and self.inference.significant


@dataclass(frozen=True)
class CellFailure:
    cell: SpecCell
    code: str
    message: str


@dataclass(frozen=True)
class GridResult:
    rows: Tuple[CellResult, ...]
    failures: Tuple[CellFailure, ...] = field(default_factory=tuple)

    def to_frame(self) -> pd.DataFrame:
        """One row per successful cell, in cell-id order"""
        records = []
        for row in self.rows:
            inf = row.inference
            records.append({
                "cell_id": row.cell.cell_id,
                "outcome": row.cell.outcome,
                "donor_pool": row.cell.donor_pool,
                "pre_period_start": row.cell.pre_period_start,
                "covariates": row.cell.covariates,
                "method": row.estimate.method.value,
                "estimate": row.estimate.tau_hat,
                "ci_low": inf.ci_low if inf else None,
                "ci_high": inf.ci_high if inf else None,
                "se": inf.se if inf else None,
                "p_value": inf.p_value if inf else None,
                "significant": row.significant,
                "n_donors": row.estimate.n_donors,
                "n_pre": row.estimate.n_pre,
                "pre_rmspe": row.estimate.pre_rmspe,
                "post_rmspe": row.estimate.post_rmspe,
            })
        columns = ["cell_id", "outcome", "donor_pool", "pre_period_start", "covariates", "method", "estimate",
                   "ci_low", "ci_high", "se", "p_value", "significant", "n_donors", "n_pre", "pre_rmspe",
                   "post_rmspe"]
        return pd.DataFrame(records, columns=columns)

    def scm_ratio_table(self) -> pd.DataFrame:
        """Specification, estimate, treated RMSPE ratio, placebo ratio range and p for SCM cells"""
        records = [
            {
                "specification": row.cell.cell_id,
                "estimate": row.estimate.tau_hat,
                "treated_ratio": row.rmspe.treated_ratio,
                "ratio_min": row.rmspe.placebo_min,
                "ratio_max": row.rmspe.placebo_max,
                "p_value": row.rmspe.p_value,
                "n_pre": row.estimate.n_pre,
                "n_donors": row.estimate.n_donors,
            }
            for row in self.rows if row.rmspe is not None
        ]
        return pd.DataFrame(records, columns=["specification", "estimate", "treated_ratio", "ratio_min",
                                              "ratio_max", "p_value", "n_pre", "n_donors"])

    def to_dict(self) -> Dict[str, Any]:
        return {
            "cells": [
                {
                    "cell_id": row.cell.cell_id,
                    "cell": row.cell.model_dump(mode="json"),
                    "estimate": row.estimate.to_dict(),
                    "inference": row.inference.model_dump(mode="json") if row.inference else None,
                    "rmspe_ratio": row.rmspe.model_dump(mode="json") if row.rmspe else None,
                    "significant": row.significant,
                    "notes": list(row.notes),
                }
                for row in self.rows
            ],
            "failures": [
                {"cell_id": f.cell.cell_id, "error": f.code, "message": f.message} for f in self.failures
            ],
        }


def _cell_panel(grid: SpecGrid, cell: SpecCell, panels: Mapping[str, Panel],
                chars: Optional[CharacteristicsTable]) -> Panel:
    panel = panels[cell.outcome]
    pool = grid.resolve_pool(cell.donor_pool)
    if pool.criteria is not None:
        if chars is None:
            raise ConfigError(f"Donor pool {cell.donor_pool!r} uses criteria but no characteristics table is loaded")
        panel = panel.keep_units(filter_donors(chars, pool.criteria, panel.treated_unit))
    elif pool.donors is not None:
        panel = panel.keep_units(pool.donors)
    if cell.pre_period_start is not None:
        panel = panel.restrict_periods(cell.pre_period_start)
    if cell.covariates:
        if chars is None:
            raise ConfigError("Covariate adjustment needs a characteristics table")
        panel = residualize_covariates(panel, chars, grid.covariate_columns)
    return panel


def run_cell(grid: SpecGrid, cell: SpecCell, panels: Mapping[str, Panel],
             chars: Optional[CharacteristicsTable] = None) -> CellResult:
    panel = _cell_panel(grid, cell, panels, chars)
    result = estimate(panel, grid.settings)
    dist = placebo_distribution(panel, grid.settings, leave_treated_out=grid.leave_treated_out,
                                treated_estimate=result)
    notes = list(panel.notes) + list(result.warnings) + list(dist.warnings)
    try:
        inference = infer(result.tau_hat, dist, grid.inference_mode, grid.include_treated)
    except DegenerateDistribution as e:
        inference = None
        notes.append(f"Inference unavailable: {e}")
    rmspe = None
    if result.method == Method.SCM:
        try:
            rmspe = rmspe_ratio_test(dist)
        except DegenerateDistribution as e:
            notes.append(f"RMSPE ratio test unavailable: {e}")
    return CellResult(cell=cell, estimate=result, inference=inference, rmspe=rmspe, notes=tuple(notes))


def run_spec_grid(grid: SpecGrid, panels: Mapping[str, Panel], chars: Optional[CharacteristicsTable] = None,
                  max_workers: int = 1) -> GridResult:
    """
    Run every cell of ``grid``.

    Args:
        grid: axes and shared estimator settings
        panels: outcome name -> panel
        chars: characteristics table for criteria-based pools and covariate cells
        max_workers: thread fan-out across cells

    Returns:
        GridResult sorted by cell id; failed cells are listed in ``failures``
    """
    cells = grid.cells()
    unknown_outcomes = sorted({c.outcome for c in cells} - set(panels))
    if unknown_outcomes:
        raise ConfigError(f"Grid references outcomes with no panel: {unknown_outcomes}")
    for name in grid.donor_pools:
        grid.resolve_pool(name)

    def run(cell: SpecCell) -> "CellResult | CellFailure":
        try:
            return run_cell(grid, cell, panels, chars)
        except (ToolkitError, np.linalg.LinAlgError) as e:
            code = getattr(e, "code", type(e).__name__)
            logger.warning(f"Grid cell {cell.cell_id} failed: {code}: {e}")
            return CellFailure(cell=cell, code=code, message=str(e))

    if max_workers > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as executor:
            outcomes = list(executor.map(run, cells))
    else:
        outcomes = [run(c) for c in cells]

    rows = tuple(o for o in outcomes if isinstance(o, CellResult))
    failures = tuple(o for o in outcomes if isinstance(o, CellFailure))
    logger.info(f"Spec grid: {len(rows)} of {len(cells)} cells estimated")
    return GridResult(rows=rows, failures=failures)


def composition_checks(panels: Mapping[str, Panel], settings: Optional[EstimatorSettings] = None,
                       inference_mode: "str | InferenceMode" = InferenceMode.GAUSSIAN,
                       leave_treated_out: bool = True, max_workers: int = 1) -> GridResult:
    """Same estimator and inference per outcome panel; rows with p < 0.05 are flagged significant"""
    grid = SpecGrid(
        outcomes=sorted(panels),
        settings=settings or EstimatorSettings(),
        inference_mode=InferenceMode.parse(inference_mode),
        leave_treated_out=leave_treated_out,
    )
    return run_spec_grid(grid, panels, max_workers=max_workers)


def estimate_spread(result: GridResult) -> float:
    """Max minus min estimate across successful cells"""
    taus = np.array([row.estimate.tau_hat for row in result.rows], dtype=np.float64)
    return float(taus.max() - taus.min()) if taus.size else 0.0
