"""
Core analysis engine.
Orchestrates loading, donor selection, estimation, inference, grids and simulation for one run.
"""
import logging
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Any, Dict, List, Optional

import pandas as pd
from pydantic import ValidationError

from ..data.donor_pool import filter_donors, pool_summary
from ..data.panel_store import (
    CharacteristicsTable,
    Panel,
    PanelSchema,
    load_characteristics,
    load_panel,
    validate_panel,
)
from ..errors import ConfigError, DataValidationError, DegenerateDistribution, PanelValidationError, ToolkitError
from ..reporting.figures import balance_series, fit_series, load_reference_series, trend_series
from ..simulation.simgen import MonteCarloSummary, monte_carlo
from .estimators import EstimateResult, Method, estimate, residualize_covariates
from .inference import (
    InferenceResult,
    OverfitReport,
    PlaceboDistribution,
    RmspeRatioTest,
    infer,
    overfit_diagnostic,
    placebo_distribution,
    rmspe_ratio_test,
)
from .sensitivity import GridResult, SpecGrid, run_spec_grid

if TYPE_CHECKING:
    from src.config import RunConfig

logger = logging.getLogger(__name__)

PRIMARY_OUTCOME = "primary"


@dataclass
class PlaceboRun:
    estimate: EstimateResult
    distribution: PlaceboDistribution
    inference: Optional[InferenceResult] = None
    rmspe: Optional[RmspeRatioTest] = None
    overfit: Optional[OverfitReport] = None
    notes: List[str] = field(default_factory=list)


@dataclass
class ValidationOutcome:
    ok: bool
    payload: Dict[str, Any]


class AnalysisEngine:
    """Main analysis engine that runs one configured pipeline"""

    def __init__(self, run: "RunConfig"):
        self.run = run
        self.settings = run.estimator_settings
        self._chars: Optional[CharacteristicsTable] = None

    @property
    def characteristics(self) -> Optional[CharacteristicsTable]:
        if self._chars is None and self.run.characteristics_path is not None:
            self._chars = load_characteristics(self.run.characteristics_path)
        return self._chars

    def load_panel(self, schema: Optional[PanelSchema] = None, path: Optional[Any] = None) -> Panel:
        panel_path, assignment = self.run.require_panel()
        return load_panel(path or panel_path, schema or self.run.panel_schema, assignment)

    def select_donors(self, panel: Panel) -> Panel:
        """Apply the explicit donor list or the donor criteria, if configured"""
        if self.run.donors is not None:
            return panel.keep_units(self.run.donors)
        if self.run.criteria is not None:
            chars = self.characteristics
            if chars is None:
                raise ConfigError("Donor criteria need [DATA] characteristics_path")
            return panel.keep_units(filter_donors(chars, self.run.criteria, panel.treated_unit))
        return panel

    def prepare(self, panel: Panel) -> Panel:
        panel = self.select_donors(panel)
        if self.run.pre_period_start is not None:
            panel = panel.restrict_periods(self.run.pre_period_start)
        if self.run.covariates:
            chars = self.characteristics
            if chars is None:
                raise ConfigError("Covariate adjustment needs [DATA] characteristics_path")
            panel = residualize_covariates(panel, chars, self.run.covariates)
        return panel

    def analysis_panel(self) -> Panel:
        return self.prepare(self.load_panel())

    def estimate(self, panel: Optional[Panel] = None) -> EstimateResult:
        panel = panel or self.analysis_panel()
        result = estimate(panel, self.settings)
        logger.info(f"{result.method.value} estimate for {result.treated_unit}: {result.tau_hat:.4f}")
        return result

    def placebo(self, panel: Optional[Panel] = None, result: Optional[EstimateResult] = None) -> PlaceboRun:
        """Estimate, placebo distribution and inference; SCM runs also get the RMSPE ratio test"""
        panel = panel or self.analysis_panel()
        result = result or self.estimate(panel)
        dist = placebo_distribution(panel, self.settings, leave_treated_out=self.run.leave_treated_out,
                                    max_workers=self.run.max_workers, treated_estimate=result)
        outcome = PlaceboRun(estimate=result, distribution=dist, notes=list(dist.warnings))
        try:
            outcome.inference = infer(result.tau_hat, dist, self.run.inference_mode, self.run.include_treated)
        except DegenerateDistribution as e:
            outcome.notes.append(f"Inference unavailable: {e}")
            logger.warning(f"Inference unavailable: {e}")
        if result.method == Method.SCM:
            outcome.rmspe = rmspe_ratio_test(dist)
            outcome.overfit = overfit_diagnostic(dist)
            if outcome.overfit.overfit:
                logger.warning(outcome.overfit.advisory)
        return outcome

    def figures(self) -> Dict[str, pd.DataFrame]:
        panel = self.analysis_panel()
        result = self.estimate(panel)
        reference = None
        if self.run.reference_path is not None:
            reference = load_reference_series(self.run.reference_path)
        return {
            "trend": trend_series(panel, reference),
            "fit": fit_series(panel, result),
            "balance": balance_series(panel, result),
        }

    def spec_grid(self) -> SpecGrid:
        axes = self.run.grid
        try:
            grid = SpecGrid(
                outcomes=axes.outcomes,
                donor_pools=axes.donor_pools,
                pre_period_starts=axes.pre_period_starts,
                covariates=axes.covariates,
                covariate_columns=self.run.covariates,
                pools=self.run.donor_pools,
                settings=self.settings,
                inference_mode=self.run.inference_mode,
                include_treated=self.run.include_treated,
                leave_treated_out=self.run.leave_treated_out,
            )
        except ValidationError as e:
            raise ConfigError(f"Invalid sensitivity grid: {e}")
        for name in grid.donor_pools:
            grid.resolve_pool(name)
        return grid

    def outcome_panels(self, names: List[str]) -> Dict[str, Panel]:
        panels = {}
        for name in sorted(set(names)):
            if name == PRIMARY_OUTCOME:
                panels[name] = self.load_panel()
            elif name in self.run.outcomes:
                source = self.run.outcomes[name]
                panels[name] = self.load_panel(schema=source.panel_schema, path=source.panel_path)
            else:
                raise ConfigError(f"Grid outcome {name!r} has no [OUTCOME {name}] section")
        return panels

    def sensitivity(self) -> GridResult:
        grid = self.spec_grid()
        panels = self.outcome_panels(grid.outcomes)
        needs_chars = any(grid.covariates) or any(
            grid.resolve_pool(name).criteria is not None for name in grid.donor_pools)
        chars = self.characteristics if needs_chars else None
        return run_spec_grid(grid, panels, chars, max_workers=self.run.max_workers)

    def simulate(self) -> MonteCarloSummary:
        return monte_carlo(
            self.run.simulation,
            self.run.n_reps,
            settings=self.settings,
            inference=self.run.simulate_inference,
            mode=self.run.inference_mode,
            leave_treated_out=self.run.leave_treated_out,
            max_workers=self.run.max_workers,
            include_treated=self.run.include_treated,
        )

    def donor_summary(self, donors: List[str]) -> Optional[pd.DataFrame]:
        chars = self.characteristics
        return pool_summary(chars, donors) if chars is not None else None

    def validate(self) -> ValidationOutcome:
        """Check every configured input without stopping at the first failure"""
        payload: Dict[str, Any] = {"panel": None, "characteristics": None, "donors": None, "errors": []}
        ok = True
        panel = None
        try:
            panel = self.load_panel()
            payload["panel"] = {
                "units": len(panel.units),
                "periods": list(panel.periods),
                "treated_unit": panel.treated_unit,
                "report": validate_panel(panel).model_dump(mode="json"),
            }
        except PanelValidationError as e:
            ok = False
            payload["panel"] = {"report": e.report.model_dump(mode="json") if e.report else None}
            payload["errors"].append(e.to_dict())
        except DataValidationError as e:
            ok = False
            payload["errors"].append(e.to_dict())

        if self.run.characteristics_path is not None:
            try:
                chars = self.characteristics
                payload["characteristics"] = {
                    "units": len(chars.units),
                    "report": chars.validate().model_dump(mode="json"),
                }
            except PanelValidationError as e:
                ok = False
                payload["characteristics"] = {"report": e.report.model_dump(mode="json") if e.report else None}
                payload["errors"].append(e.to_dict())

        if panel is not None and (self.run.donors is not None or self.run.criteria is not None):
            try:
                payload["donors"] = list(self.select_donors(panel).donors)
            except ToolkitError as e:
                ok = False
                payload["errors"].append(e.to_dict())

        payload["ok"] = ok
        return ValidationOutcome(ok=ok, payload=payload)
