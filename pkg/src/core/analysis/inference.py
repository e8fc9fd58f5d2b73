"""
Placebo-based inference for a single treated unit.

Treatment is reassigned to each donor in turn and the estimator is re-run on the donor-only
panel. The resulting placebo effects feed a Gaussian interval (placebo standard deviation),
an exact permutation p-value, and, for synthetic control fits, the post/pre RMSPE ratio test
and an overfitting diagnostic.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field
from scipy import stats

from ..data.panel_store import Panel
from ..errors import DegenerateDistribution, InsufficientDonors, ToolkitError
from .estimators import EstimateResult, EstimatorSettings, estimate

logger = logging.getLogger(__name__)

EPS_RATIO_FACTOR = 1e-12
EPS_ABS = 1e-8
RATIO_THRESHOLD = 1e3
SIGNIFICANCE_LEVEL = 0.05

OVERFIT_ADVISORY = (
    "Pre-period fit is suspiciously tight relative to the post-period gap, a sign of fitting "
    "idiosyncratic noise. Extend the pre-intervention window or trim the donor pool."
)


class InferenceMode(str, Enum):
    GAUSSIAN = "gaussian_placebo"
    PERMUTATION = "permutation"

    @classmethod
    def parse(cls, value: "str | InferenceMode") -> "InferenceMode":
        """Accept the CLI short names ``gaussian`` / ``permutation`` as well as the enum values"""
        if isinstance(value, cls):
            return value
        text = str(value).strip().lower()
        if text == "gaussian":
            return cls.GAUSSIAN
        return cls(text)


def ratio_epsilon(outcome_scale: float) -> float:
    return EPS_RATIO_FACTOR * outcome_scale


@dataclass(frozen=True)
class PlaceboEntry:
    unit: str
    tau: float
    pre_rmspe: float
    post_rmspe: float
    rmspe_ratio: float
    ok: bool = True
    error: Optional[str] = None

    @classmethod
    def from_estimate(cls, result: EstimateResult, eps: float) -> "PlaceboEntry":
        return cls(unit=result.treated_unit, tau=result.tau_hat, pre_rmspe=result.pre_rmspe,
                   post_rmspe=result.post_rmspe, rmspe_ratio=result.rmspe_ratio(eps))

    @classmethod
    def failed(cls, unit: str, error: str) -> "PlaceboEntry":
        nan = float("nan")
        return cls(unit=unit, tau=nan, pre_rmspe=nan, post_rmspe=nan, rmspe_ratio=nan, ok=False, error=error)


@dataclass(frozen=True)
class PlaceboDistribution:
    """Placebo effects for every donor plus the treated unit's own entry"""

    entries: Tuple[PlaceboEntry, ...]
    treated_entry: PlaceboEntry
    method: str
    outcome_scale: float
    leave_treated_out: bool = True
    warnings: Tuple[str, ...] = field(default_factory=tuple)

    @property
    def usable(self) -> List[PlaceboEntry]:
        return [e for e in self.entries if e.ok]

    @property
    def n_placebos(self) -> int:
        return len(self.usable)

    @property
    def taus(self) -> np.ndarray:
        return np.array([e.tau for e in self.usable], dtype=np.float64)

    @property
    def ratios(self) -> np.ndarray:
        return np.array([e.rmspe_ratio for e in self.usable], dtype=np.float64)

    def to_frame(self) -> pd.DataFrame:
        rows = [
            {"unit": e.unit, "tau_placebo": e.tau, "pre_rmspe": e.pre_rmspe, "post_rmspe": e.post_rmspe,
             "rmspe_ratio": e.rmspe_ratio, "ok": e.ok}
            for e in self.entries
        ]
        return pd.DataFrame(rows, columns=["unit", "tau_placebo", "pre_rmspe", "post_rmspe", "rmspe_ratio", "ok"])


class InferenceResult(BaseModel):
    model_config = ConfigDict(frozen=True)

    tau: float
    mode: InferenceMode
    n_placebos: int
    se: Optional[float] = None
    ci_low: Optional[float] = None
    ci_high: Optional[float] = None
    p_gaussian: Optional[float] = Field(default=None, ge=0, le=1)
    p_permutation: Optional[float] = Field(default=None, ge=0, le=1)

    @property
    def p_value(self) -> Optional[float]:
        """p-value of the active mode"""
        return self.p_gaussian if self.mode == InferenceMode.GAUSSIAN else self.p_permutation

    @property
    def significant(self) -> bool:
        p = self.p_value
        return p is not None and p < SIGNIFICANCE_LEVEL


class RmspeRatioTest(BaseModel):
    treated_ratio: float
    placebo_min: float
    placebo_max: float
    p_value: float = Field(ge=0, le=1)
    n_placebos: int


class OverfitThresholds(BaseModel):
    model_config = ConfigDict(frozen=True)

    eps_abs: float = Field(default=EPS_ABS, gt=0)
    ratio_threshold: float = Field(default=RATIO_THRESHOLD, gt=0)


class OverfitReport(BaseModel):
    overfit: bool
    treated_pre_rmspe: float
    treated_ratio: float
    pre_rmspe_floor: float
    ratio_threshold: float
    triggers: List[str] = Field(default_factory=list)
    advisory: Optional[str] = None


def _estimate_entry(panel: Panel, settings: EstimatorSettings, eps: float) -> PlaceboEntry:
    unit = panel.treated_unit
    try:
        return PlaceboEntry.from_estimate(estimate(panel, settings), eps)
    except (ToolkitError, np.linalg.LinAlgError) as e:
        logger.warning(f"Placebo estimate for {unit} failed: {e}")
        return PlaceboEntry.failed(unit, str(e))


def placebo_distribution(panel: Panel, settings: Optional[EstimatorSettings] = None,
                         leave_treated_out: bool = True, max_workers: int = 1,
                         treated_estimate: Optional[EstimateResult] = None) -> PlaceboDistribution:
    """
    Re-estimate with each donor as the pseudo-treated unit.

    Args:
        panel: panel with the true treated unit
        settings: estimator settings shared by every placebo fit
        leave_treated_out: drop the true treated unit from placebo panels
        max_workers: thread fan-out for placebo fits; results are ordered by unit id either way
        treated_estimate: reuse an existing estimate for the treated entry

    Returns:
        PlaceboDistribution with one entry per donor
    """
    settings = settings or EstimatorSettings()
    donors = sorted(panel.donors)
    if len(donors) < 2:
        raise InsufficientDonors(f"Placebo inference needs at least 2 donors, got {len(donors)}")

    eps = ratio_epsilon(panel.outcome_scale)
    treated_result = treated_estimate or estimate(panel, settings)
    treated_entry = PlaceboEntry.from_estimate(treated_result, eps)

    pool = panel.drop_unit(panel.treated_unit) if leave_treated_out else panel
    placebo_panels = [pool.reassign(unit) for unit in donors]

    if max_workers > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as executor:
            entries = list(executor.map(lambda p: _estimate_entry(p, settings, eps), placebo_panels))
    else:
        entries = [_estimate_entry(p, settings, eps) for p in placebo_panels]

    failed = [e.unit for e in entries if not e.ok]
    warnings = (f"Placebo fits failed for: {', '.join(failed)}",) if failed else ()
    logger.info(f"Placebo distribution: {len(entries) - len(failed)} of {len(entries)} fits usable")
    return PlaceboDistribution(
        entries=tuple(entries),
        treated_entry=treated_entry,
        method=settings.method.value,
        outcome_scale=panel.outcome_scale,
        leave_treated_out=leave_treated_out,
        warnings=warnings,
    )


def gaussian_interval(tau: float, se: float, alpha: float = SIGNIFICANCE_LEVEL,
                      null_value: float = 0.0) -> Tuple[float, float, float]:
    """
    Normal interval and two-sided p-value.

    Returns:
        (ci_low, ci_high, p) with ci = tau +/- z_{1-alpha/2} * se and p for H0: effect = null_value
    """
    if not np.isfinite(se) or se <= 0:
        raise DegenerateDistribution(f"Standard error must be positive, got {se}")
    z = stats.norm.ppf(1.0 - alpha / 2.0)
    p = 2.0 * stats.norm.sf(abs(tau - null_value) / se)
    return float(tau - z * se), float(tau + z * se), float(min(max(p, 0.0), 1.0))


def placebo_se(dist: PlaceboDistribution) -> float:
    taus = dist.taus
    if taus.size < 2:
        raise DegenerateDistribution(f"Need at least 2 usable placebo estimates, got {taus.size}")
    se = float(np.std(taus, ddof=1))
    if se <= 0:
        raise DegenerateDistribution("Placebo estimates have zero spread")
    return se


def permutation_p(tau: float, dist: PlaceboDistribution, include_treated: bool = True) -> float:
    """
    Share of placebo effects at least as large in magnitude as ``tau``.

    With ``include_treated`` the treated estimate counts itself: (k + 1) / (n + 1). That keeps
    P(p <= alpha) <= alpha under the null; ``include_treated=False`` gives the plain k / n rank.
    """
    taus = dist.taus
    if taus.size == 0:
        raise DegenerateDistribution("No usable placebo estimates")
    extreme = int(np.sum(np.abs(taus) >= abs(tau)))
    if include_treated:
        return (extreme + 1) / (taus.size + 1)
    return extreme / taus.size


def gaussian_placebo_inference(tau: float, dist: PlaceboDistribution, include_treated: bool = True) -> InferenceResult:
    se = placebo_se(dist)
    low, high, p = gaussian_interval(tau, se)
    return InferenceResult(tau=tau, mode=InferenceMode.GAUSSIAN, n_placebos=dist.n_placebos, se=se, ci_low=low,
                           ci_high=high, p_gaussian=p, p_permutation=permutation_p(tau, dist, include_treated))


def permutation_inference(tau: float, dist: PlaceboDistribution, include_treated: bool = True) -> InferenceResult:
    p = permutation_p(tau, dist, include_treated)
    try:
        se = placebo_se(dist)
        low, high, p_gauss = gaussian_interval(tau, se)
    except DegenerateDistribution:
        se = low = high = p_gauss = None
    return InferenceResult(tau=tau, mode=InferenceMode.PERMUTATION, n_placebos=dist.n_placebos, se=se,
                           ci_low=low, ci_high=high, p_gaussian=p_gauss, p_permutation=p)


def infer(tau: float, dist: PlaceboDistribution, mode: "str | InferenceMode" = InferenceMode.GAUSSIAN,
          include_treated: bool = True) -> InferenceResult:
    mode = InferenceMode.parse(mode)
    if mode == InferenceMode.GAUSSIAN:
        return gaussian_placebo_inference(tau, dist, include_treated)
    return permutation_inference(tau, dist, include_treated)


def rmspe_ratio_test(dist: PlaceboDistribution) -> RmspeRatioTest:
    """Rank the treated post/pre RMSPE ratio against the placebo ratios (treated excluded from the count)"""
    ratios = dist.ratios
    ratios = ratios[np.isfinite(ratios)]
    treated = dist.treated_entry.rmspe_ratio
    if ratios.size == 0 or not np.isfinite(treated):
        raise DegenerateDistribution("No defined RMSPE ratios")
    return RmspeRatioTest(
        treated_ratio=float(treated),
        placebo_min=float(ratios.min()),
        placebo_max=float(ratios.max()),
        p_value=float(np.sum(ratios >= treated) / ratios.size),
        n_placebos=int(ratios.size),
    )


def _overfit_report(pre_rmspe: float, ratio: float, outcome_scale: float,
                    thresholds: Optional[OverfitThresholds]) -> OverfitReport:
    thresholds = thresholds or OverfitThresholds()
    floor = thresholds.eps_abs * outcome_scale
    triggers = []
    if pre_rmspe < floor:
        triggers.append("pre_rmspe_below_floor")
    if ratio > thresholds.ratio_threshold:
        triggers.append("rmspe_ratio_above_threshold")
    overfit = bool(triggers)
    return OverfitReport(
        overfit=overfit,
        treated_pre_rmspe=float(pre_rmspe),
        treated_ratio=float(ratio),
        pre_rmspe_floor=floor,
        ratio_threshold=thresholds.ratio_threshold,
        triggers=triggers,
        advisory=OVERFIT_ADVISORY if overfit else None,
    )


def overfit_diagnostic(dist: PlaceboDistribution, thresholds: Optional[OverfitThresholds] = None) -> OverfitReport:
    entry = dist.treated_entry
    return _overfit_report(entry.pre_rmspe, entry.rmspe_ratio, dist.outcome_scale, thresholds)


def overfit_from_estimate(result: EstimateResult, outcome_scale: float,
                          thresholds: Optional[OverfitThresholds] = None) -> OverfitReport:
    ratio = result.rmspe_ratio(ratio_epsilon(outcome_scale))
    return _overfit_report(result.pre_rmspe, ratio, outcome_scale, thresholds)


def inference_payload(result: InferenceResult, dist: PlaceboDistribution) -> Dict[str, Any]:
    """JSON record combining the inference result with placebo bookkeeping"""
    payload = result.model_dump(mode="json")
    payload["p_value"] = result.p_value
    payload["significant"] = result.significant
    payload["method"] = dist.method
    payload["leave_treated_out"] = dist.leave_treated_out
    payload["n_failed"] = len(dist.entries) - dist.n_placebos
    payload["warnings"] = list(dist.warnings)
    return payload
