"""
Synthetic panels with known treatment effect and a Monte Carlo harness around them.

Outcomes follow an interactive fixed-effects model

    Y_it = baseline + unit_i + time_t + loadings_i @ factors_t + noise_it

with ``true_tau`` added to the treated unit (always index 0, ``u000``) in post periods.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field
from tqdm import tqdm

from ..analysis.estimators import EstimatorSettings, Method, estimate
from ..analysis.inference import (
    SIGNIFICANCE_LEVEL,
    InferenceMode,
    OverfitThresholds,
    gaussian_interval,
    overfit_from_estimate,
    permutation_p,
    placebo_distribution,
    placebo_se,
)
from ..analysis.weight_solver import WeightSolution
from ..data.panel_store import OutcomeKind, Panel, panel_from_matrix
from ..errors import TooLargeForOracle, ToolkitError

logger = logging.getLogger(__name__)

TREATED_UNIT = "u000"
MAX_ORACLE_COLUMNS = 3


class FactorModelSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    n_donors: int = Field(default=20, ge=1)
    n_pre: int = Field(default=3, ge=1)
    n_post: int = Field(default=1, ge=1)
    n_factors: int = Field(default=1, ge=0)
    factor_loading_scale: float = Field(default=1.0, ge=0)
    noise_sd: float = Field(default=0.5, ge=0)
    unit_effect_sd: float = Field(default=1.0, ge=0)
    time_effect_sd: float = Field(default=1.0, ge=0)
    true_tau: float = 0.0
    baseline: float = 0.0
    seed: int = Field(default=0, ge=0, lt=2 ** 64)

    @property
    def treatment_start(self) -> int:
        return self.n_pre + 1


def generate_panel(spec: FactorModelSpec, rng: Optional[np.random.Generator] = None) -> Tuple[Panel, float]:
    """
    Draw one panel from the factor model.

    Args:
        spec: model parameters; ``spec.seed`` seeds the generator when ``rng`` is not given
        rng: generator to draw from (Monte Carlo reps pass their own)

    Returns:
        (panel, true_tau) with units u000 (treated), u001, ... and periods 1..n_pre+n_post
    """
    rng = rng or np.random.Generator(np.random.PCG64(spec.seed))
    n_units = spec.n_donors + 1
    n_periods = spec.n_pre + spec.n_post

    unit_effects = rng.normal(0.0, spec.unit_effect_sd, size=n_units)
    time_effects = rng.normal(0.0, spec.time_effect_sd, size=n_periods)
    loadings = rng.normal(0.0, spec.factor_loading_scale, size=(n_units, spec.n_factors))
    factors = rng.normal(0.0, 1.0, size=(spec.n_factors, n_periods))
    noise = rng.normal(0.0, spec.noise_sd, size=(n_units, n_periods))

    outcomes = spec.baseline + unit_effects[:, None] + time_effects[None, :] + loadings @ factors + noise
    outcomes[0, spec.n_pre:] += spec.true_tau
    panel = panel_from_matrix(outcomes, treated_unit=TREATED_UNIT, treatment_start=spec.treatment_start,
                              outcome_kind=OutcomeKind.LEVEL)
    return panel, spec.true_tau


@dataclass(frozen=True)
class RepOutcome:
    tau_hat: Optional[float]
    overfit: bool = False
    se: Optional[float] = None
    covered: Optional[bool] = None
    rejected: Optional[bool] = None
    error: Optional[str] = None


class MonteCarloSummary(BaseModel):
    method: Method
    n_reps: int
    n_failed: int
    mean_bias: Optional[float] = None
    rmse: Optional[float] = None
    coverage_95: Optional[float] = Field(default=None, ge=0, le=1)
    rejection_rate_at_null: Optional[float] = Field(default=None, ge=0, le=1)
    overfit_rate: Optional[float] = Field(default=None, ge=0, le=1)
    mean_se: Optional[float] = None
    n_inference: int = 0

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([self.model_dump(mode="json")])


def _run_rep(spec: FactorModelSpec, seed_seq: np.random.SeedSequence, settings: EstimatorSettings,
             inference: bool, mode: InferenceMode, thresholds: OverfitThresholds,
             leave_treated_out: bool, include_treated: bool = True) -> RepOutcome:
    rng = np.random.Generator(np.random.PCG64(seed_seq))
    panel, true_tau = generate_panel(spec, rng)
    try:
        result = estimate(panel, settings)
    except (ToolkitError, np.linalg.LinAlgError) as e:
        logger.debug(f"Rep failed to estimate: {e}")
        return RepOutcome(tau_hat=None, error=getattr(e, "code", type(e).__name__))

    overfit = overfit_from_estimate(result, panel.outcome_scale, thresholds).overfit
    if not inference:
        return RepOutcome(tau_hat=result.tau_hat, overfit=overfit)

    try:
        dist = placebo_distribution(panel, settings, leave_treated_out=leave_treated_out, treated_estimate=result)
        se = placebo_se(dist)
        low, high, p_gauss = gaussian_interval(result.tau_hat, se, null_value=true_tau)
    except (ToolkitError, np.linalg.LinAlgError) as e:
        logger.debug(f"Inference unavailable for one rep: {e}")
        return RepOutcome(tau_hat=result.tau_hat, overfit=overfit)

    if mode == InferenceMode.PERMUTATION:
        p = permutation_p(result.tau_hat - true_tau, dist, include_treated)
    else:
        p = p_gauss
    return RepOutcome(tau_hat=result.tau_hat, overfit=overfit, se=se,
                      covered=bool(low <= true_tau <= high), rejected=bool(p <= SIGNIFICANCE_LEVEL))


def _mean(values: Sequence[float]) -> Optional[float]:
    return float(np.mean(values)) if len(values) else None


def summarize(outcomes: Sequence[RepOutcome], spec: FactorModelSpec, method: Method) -> MonteCarloSummary:
    estimated = [o for o in outcomes if o.tau_hat is not None]
    errors = np.array([o.tau_hat - spec.true_tau for o in estimated], dtype=np.float64)
    with_inference = [o for o in estimated if o.covered is not None]
    rmse = float(np.sqrt(np.mean(errors ** 2))) if errors.size else None
    return MonteCarloSummary(
        method=method,
        n_reps=len(outcomes),
        n_failed=len(outcomes) - len(estimated),
        mean_bias=_mean(errors),
        rmse=rmse,
        coverage_95=_mean([float(o.covered) for o in with_inference]),
        rejection_rate_at_null=_mean([float(o.rejected) for o in with_inference]),
        overfit_rate=_mean([float(o.overfit) for o in estimated]),
        mean_se=_mean([o.se for o in with_inference]),
        n_inference=len(with_inference),
    )


def monte_carlo(spec: FactorModelSpec, n_reps: int, settings: Optional[EstimatorSettings] = None,
                inference: bool = True, mode: "str | InferenceMode" = InferenceMode.GAUSSIAN,
                thresholds: Optional[OverfitThresholds] = None, leave_treated_out: bool = True,
                max_workers: int = 1, progress: bool = False, include_treated: bool = True) -> MonteCarloSummary:
    """
    Repeat generate -> estimate -> infer ``n_reps`` times.

    Each rep draws from its own generator spawned off ``spec.seed``, so results do not depend on
    ``max_workers``. Coverage and rejection are tested against H0: effect = ``spec.true_tau``.
    A rep rejects when its p-value is at most the 5% level; permutation p uses ``include_treated``.
    """
    if n_reps < 1:
        raise ValueError(f"n_reps must be at least 1, got {n_reps}")
    settings = settings or EstimatorSettings()
    mode = InferenceMode.parse(mode)
    thresholds = thresholds or OverfitThresholds()
    seeds = np.random.SeedSequence(spec.seed).spawn(n_reps)

    def run(seed_seq: np.random.SeedSequence) -> RepOutcome:
        return _run_rep(spec, seed_seq, settings, inference, mode, thresholds, leave_treated_out, include_treated)

    logger.info(f"Monte Carlo: {n_reps} reps of {settings.method.value} "
                f"({spec.n_donors} donors, {spec.n_pre} pre, {spec.n_post} post)")
    if max_workers > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as executor:
            outcomes: List[RepOutcome] = list(tqdm(executor.map(run, seeds), total=n_reps, disable=not progress))
    else:
        outcomes = [run(s) for s in tqdm(seeds, total=n_reps, disable=not progress)]

    summary = summarize(outcomes, spec, settings.method)
    if summary.n_failed:
        logger.warning(f"{summary.n_failed} of {n_reps} Monte Carlo reps failed to estimate")
    return summary


def simplex_grid(k: int, step: float) -> np.ndarray:
    """All points of the (k-1)-simplex whose coordinates are multiples of ``step`` (k <= 3)"""
    if k < 1:
        raise ValueError("Need at least one column")
    if k > MAX_ORACLE_COLUMNS:
        raise TooLargeForOracle(f"Grid oracle supports at most {MAX_ORACLE_COLUMNS} columns, got {k}")
    m = int(round(1.0 / step))
    if m < 1 or abs(m * step - 1.0) > 1e-9:
        raise ValueError(f"step must divide 1 evenly, got {step}")
    if k == 1:
        return np.ones((1, 1))
    if k == 2:
        a = np.arange(m + 1)
        return np.column_stack([a, m - a]) / m
    i, j = np.meshgrid(np.arange(m + 1), np.arange(m + 1), indexing="ij")
    keep = i + j <= m
    i, j = i[keep], j[keep]
    return np.column_stack([i, j, m - i - j]) / m


def brute_force_weights(design: np.ndarray, target: np.ndarray, zeta: float = 0.0, step: float = 1e-3,
                        with_intercept: bool = True) -> WeightSolution:
    """Exhaustive simplex grid search for the weight problem; the oracle for the Frank-Wolfe solver"""
    a = np.asarray(design, dtype=np.float64)
    b = np.asarray(target, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError("design must be a matrix")
    if a.shape[1] > MAX_ORACLE_COLUMNS:
        raise TooLargeForOracle(f"Grid oracle supports at most {MAX_ORACLE_COLUMNS} columns, got {a.shape[1]}")

    grid = simplex_grid(a.shape[1], step)
    predictions = a @ grid.T
    residual_base = predictions - b[:, None]
    intercepts = -residual_base.mean(axis=0) if with_intercept else np.zeros(grid.shape[0])
    residuals = residual_base + intercepts[None, :]
    objectives = (residuals ** 2).sum(axis=0) + zeta ** 2 * a.shape[0] * (grid ** 2).sum(axis=1)
    best = int(np.argmin(objectives))
    return WeightSolution(
        weights=grid[best],
        intercept=float(intercepts[best]),
        zeta=float(zeta),
        objective_value=float(objectives[best]),
        iterations=int(grid.shape[0]),
        converged=True,
    )
