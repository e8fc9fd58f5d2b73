"""
Treatment-effect point estimators on a single-treated-unit panel.

All three methods share one representation: a synthetic series ``omega @ donors + offset``
fitted to the treated unit. The effect is the mean post-period gap between the treated unit
and that series.

- did: uniform omega, offset = mean pre-period gap
- scm: simplex omega without intercept or ridge, offset = 0 (or the mean pre-period gap)
- sdid: ridge-penalized omega with intercept, time weights lambda, offset = lambda-weighted
  pre-period gap
"""
import hashlib
import logging
from dataclasses import dataclass
from enum import Enum
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field

from ..data.panel_store import CharacteristicsTable, OutcomeKind, Panel, ensure_valid, pre_post_split
from ..errors import DataValidationError, UnknownUnit
from .weight_solver import (
    DEFAULT_MAX_ITER,
    DEFAULT_TOL,
    WeightSolution,
    compute_zeta,
    solve_simplex_regression,
    solve_time_weights,
    solve_unit_weights,
    zeta_floor,
)

logger = logging.getLogger(__name__)


class Method(str, Enum):
    DID = "did"
    SCM = "scm"
    SDID = "sdid"


class EstimatorSettings(BaseModel):
    """Estimator selection and solver knobs"""

    model_config = ConfigDict(frozen=True)

    method: Method = Method.SDID
    zeta_override: Optional[float] = Field(default=None, ge=0)
    scm_intercept: bool = False
    tol: float = Field(default=DEFAULT_TOL, gt=0)
    max_iter: int = Field(default=DEFAULT_MAX_ITER, ge=1)


@dataclass(frozen=True, eq=False)
class EstimateResult:
    tau_hat: float
    method: Method
    treated_unit: str
    pre_rmspe: float
    post_rmspe: float
    fit_offset: float
    n_donors: int
    n_pre: int
    n_post: int
    spec_fingerprint: str
    unit_weights: Optional[WeightSolution] = None
    time_weights: Optional[WeightSolution] = None
    zeta: Optional[float] = None
    warnings: Tuple[str, ...] = ()

    @property
    def weights(self) -> Optional[Tuple[WeightSolution, Optional[WeightSolution]]]:
        if self.unit_weights is None:
            return None
        return self.unit_weights, self.time_weights

    def rmspe_ratio(self, eps: float) -> float:
        return self.post_rmspe / max(self.pre_rmspe, eps)

    def to_row(self) -> Dict[str, Any]:
        return {
            "method": self.method.value,
            "tau": self.tau_hat,
            "pre_rmspe": self.pre_rmspe,
            "post_rmspe": self.post_rmspe,
            "fingerprint": self.spec_fingerprint,
        }

    def to_dict(self) -> Dict[str, Any]:
        payload: Dict[str, Any] = {
            "method": self.method.value,
            "treated_unit": self.treated_unit,
            "tau_hat": self.tau_hat,
            "pre_rmspe": self.pre_rmspe,
            "post_rmspe": self.post_rmspe,
            "fit_offset": self.fit_offset,
            "n_donors": self.n_donors,
            "n_pre": self.n_pre,
            "n_post": self.n_post,
            "zeta": self.zeta,
            "spec_fingerprint": self.spec_fingerprint,
            "warnings": list(self.warnings),
        }
        if self.unit_weights is not None:
            payload["unit_weights"] = {str(k): v for k, v in self.unit_weights.as_dict().items()}
            payload["unit_weight_diagnostics"] = self.unit_weights.diagnostics()
        if self.time_weights is not None:
            payload["time_weights"] = {str(k): v for k, v in self.time_weights.as_dict().items()}
            payload["time_weight_diagnostics"] = self.time_weights.diagnostics()
        return payload


def spec_fingerprint(panel: Panel, settings: EstimatorSettings) -> str:
    """sha256 over the panel contents and the estimator settings"""
    digest = hashlib.sha256()
    digest.update("\x1f".join(panel.units).encode("utf-8"))
    digest.update(b"\x1e")
    digest.update(",".join(str(p) for p in panel.periods).encode("utf-8"))
    digest.update(b"\x1e")
    digest.update(np.ascontiguousarray(panel.outcomes, dtype="<f8").tobytes())
    digest.update(f"{panel.treated_unit}|{panel.treatment_start}|{panel.outcome_kind.value}".encode("utf-8"))
    digest.update(settings.model_dump_json().encode("utf-8"))
    return digest.hexdigest()


def _gaps(panel: Panel, omega: np.ndarray, offset: float) -> np.ndarray:
    return panel.treated_series - (omega @ panel.donor_matrix + offset)


def _rms(values: np.ndarray) -> float:
    return float(np.sqrt(np.mean(values ** 2))) if values.size else 0.0


def _prepare(panel: Panel) -> Tuple[Panel, int, int]:
    pre, post = pre_post_split(panel)
    panel = ensure_valid(panel)
    if not panel.donors:
        raise DataValidationError("Panel needs at least one donor unit")
    return panel, len(pre), len(post)


def _result(panel: Panel, settings: EstimatorSettings, omega: np.ndarray, offset: float,
            n_pre: int, n_post: int, **extra: Any) -> EstimateResult:
    gaps = _gaps(panel, omega, offset)
    pre = panel.pre_mask
    return EstimateResult(
        tau_hat=float(np.mean(gaps[~pre])),
        method=settings.method,
        treated_unit=panel.treated_unit,
        pre_rmspe=_rms(gaps[pre]),
        post_rmspe=_rms(gaps[~pre]),
        fit_offset=float(offset),
        n_donors=len(panel.donors),
        n_pre=n_pre,
        n_post=n_post,
        spec_fingerprint=spec_fingerprint(panel, settings),
        **extra,
    )


def compute_sdid_tau(panel: Panel, omega: Sequence[float], lam: Sequence[float]) -> float:
    """
    SDID effect for arbitrary weights.

    tau = (treated post mean - lam @ treated pre) - omega @ (donor post means - donor pre @ lam)
    """
    omega = np.asarray(omega, dtype=np.float64)
    lam = np.asarray(lam, dtype=np.float64)
    pre = panel.pre_mask
    treated = panel.treated_series
    donors = panel.donor_matrix
    treated_change = treated[~pre].mean() - lam @ treated[pre]
    donor_change = donors[:, ~pre].mean(axis=1) - donors[:, pre] @ lam
    return float(treated_change - omega @ donor_change)


def estimate_did(panel: Panel, settings: Optional[EstimatorSettings] = None) -> EstimateResult:
    """Two-period difference in differences against the unweighted donor average"""
    settings = (settings or EstimatorSettings()).model_copy(update={"method": Method.DID})
    panel, n_pre, n_post = _prepare(panel)
    n_donors = len(panel.donors)
    omega = np.full(n_donors, 1.0 / n_donors)
    pre = panel.pre_mask
    offset = float(np.mean(panel.treated_series[pre] - omega @ panel.donor_matrix[:, pre]))
    return _result(panel, settings, omega, offset, n_pre, n_post)


def estimate_scm(panel: Panel, settings: Optional[EstimatorSettings] = None,
                 with_intercept: Optional[bool] = None) -> EstimateResult:
    """
    Synthetic control: simplex weights matching the treated pre-period path, no ridge.

    Args:
        panel: validated panel
        settings: solver knobs; ``scm_intercept`` selects the demeaned variant
        with_intercept: overrides ``settings.scm_intercept`` when given

    Returns:
        EstimateResult carrying the unit weights (no time weights)
    """
    settings = (settings or EstimatorSettings()).model_copy(update={"method": Method.SCM})
    if with_intercept is not None:
        settings = settings.model_copy(update={"scm_intercept": with_intercept})
    panel, n_pre, n_post = _prepare(panel)
    pre = panel.pre_mask
    solution = solve_simplex_regression(
        panel.donor_matrix[:, pre].T,
        panel.treated_series[pre],
        zeta=0.0,
        with_intercept=settings.scm_intercept,
        tol=settings.tol,
        max_iter=settings.max_iter,
        labels=panel.donors,
    )
    return _result(panel, settings, solution.weights, solution.intercept, n_pre, n_post,
                   unit_weights=solution, zeta=0.0)


def _single_period_zeta(panel: Panel) -> float:
    column = panel.donor_matrix[:, panel.pre_mask][:, 0]
    sd = float(np.std(column, ddof=1)) if column.size >= 2 else 0.0
    return sd if sd > 0 else zeta_floor(panel.outcomes)


def estimate_sdid(panel: Panel, settings: Optional[EstimatorSettings] = None,
                  zeta_override: Optional[float] = None) -> EstimateResult:
    """Synthetic difference in differences with unit and time weights"""
    settings = (settings or EstimatorSettings()).model_copy(update={"method": Method.SDID})
    if zeta_override is not None:
        settings = settings.model_copy(update={"zeta_override": zeta_override})
    panel, n_pre, n_post = _prepare(panel)
    warnings: List[str] = []

    if settings.zeta_override is not None:
        zeta = settings.zeta_override
    elif n_pre == 1:
        zeta = _single_period_zeta(panel)
    else:
        zeta = compute_zeta(panel.donor_matrix[:, panel.pre_mask], n_treated=1, n_post=n_post)
    if n_pre == 1:
        message = "Single pre-period: time weight fixed at 1.0"
        warnings.append(message)
        logger.warning(message)

    omega = solve_unit_weights(panel, zeta, tol=settings.tol, max_iter=settings.max_iter)
    lam = solve_time_weights(panel, tol=settings.tol, max_iter=settings.max_iter)
    for name, solution in (("unit", omega), ("time", lam)):
        if not solution.converged:
            warnings.append(f"{name} weights did not converge in {solution.iterations} iterations")

    pre = panel.pre_mask
    offset = float(lam.weights @ (panel.treated_series[pre] - omega.weights @ panel.donor_matrix[:, pre]))
    return _result(panel, settings, omega.weights, offset, n_pre, n_post,
                   unit_weights=omega, time_weights=lam, zeta=float(zeta), warnings=tuple(warnings))


_DISPATCH = {
    Method.DID: estimate_did,
    Method.SCM: estimate_scm,
    Method.SDID: estimate_sdid,
}


def estimate(panel: Panel, settings: Optional[EstimatorSettings] = None) -> EstimateResult:
    settings = settings or EstimatorSettings()
    return _DISPATCH[settings.method](panel, settings)


def _independent_columns(design: np.ndarray, names: Sequence[str]) -> Tuple[List[int], List[str]]:
    """Greedy left-to-right selection of columns that raise the rank of [1, kept...]"""
    kept: List[int] = []
    dropped: List[str] = []
    basis = np.ones((design.shape[0], 1))
    for j, name in enumerate(names):
        candidate = np.column_stack([basis, design[:, j]])
        if np.linalg.matrix_rank(candidate) > basis.shape[1]:
            basis = candidate
            kept.append(j)
        else:
            dropped.append(name)
    return kept, dropped


def residualize_covariates(panel: Panel, chars: CharacteristicsTable, columns: Sequence[str]) -> Panel:
    """
    Remove the part of the outcome explained by unit characteristics.

    Pooled least squares of control-unit cells (all periods) on an intercept plus the
    requested columns; the fitted values are subtracted from every cell, treated unit included.
    Collinear columns are dropped with a note on the returned panel.
    """
    columns = list(columns)
    missing_units = [u for u in panel.units if u not in chars]
    if missing_units:
        raise UnknownUnit(f"Units missing from characteristics table: {missing_units}", unit=missing_units[0])
    for name in columns:
        if name not in chars.frame.columns:
            raise UnknownUnit(f"Covariate {name!r} not in characteristics table")

    if columns:
        raw = chars.frame.loc[list(panel.units), columns]
        x_all = raw.apply(pd.to_numeric, errors="coerce").to_numpy(dtype=np.float64)
    else:
        x_all = np.empty((len(panel.units), 0))
    bad = ~np.isfinite(x_all).all(axis=1)
    if bad.any():
        unit = panel.units[int(np.flatnonzero(bad)[0])]
        raise UnknownUnit(f"Unit {unit!r} has missing or non-numeric covariate values", unit=unit)

    donor_rows = np.array([u != panel.treated_unit for u in panel.units])
    kept, dropped = _independent_columns(x_all[donor_rows], columns)
    notes = []
    if dropped:
        message = f"Dropped collinear covariates: {', '.join(dropped)}"
        notes.append(message)
        logger.warning(message)

    n_periods = len(panel.periods)
    design_units = np.column_stack([np.ones(len(panel.units)), x_all[:, kept]])
    control_design = np.repeat(design_units[donor_rows], n_periods, axis=0)
    control_y = panel.outcomes[donor_rows].ravel()
    beta, *_ = np.linalg.lstsq(control_design, control_y, rcond=None)

    fitted = (design_units @ beta)[:, None]
    logger.info(f"Residualized outcomes on {len(kept)} covariate(s)")
    return panel.with_outcomes(panel.outcomes - fitted, outcome_kind=OutcomeKind.LEVEL, notes=notes)
