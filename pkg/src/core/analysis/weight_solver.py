"""
Simplex-constrained least squares for synthetic unit and time weights.

Both weight problems share one shape:

    minimize over intercept c and simplex w:
        sum_rows (c + design @ w - target)^2 + zeta^2 * n_rows * ||w||^2

solved with away-step Frank-Wolfe (exact line search, intercept eliminated in closed
form by centering) from the uniform point, followed by an exact solve on the final
support.
"""
import logging
from dataclasses import dataclass
from typing import Any, Dict, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from ..data.panel_store import Panel
from ..errors import DataValidationError, InsufficientPrePeriods, NonFiniteInput

logger = logging.getLogger(__name__)

DEFAULT_TOL = 1e-10
DEFAULT_MAX_ITER = 10_000
WEIGHT_EMIT_FLOOR = 1e-10
TIME_ZETA_FACTOR = 1e-6
ZETA_FLOOR_FACTOR = 1e-9


@dataclass(frozen=True, eq=False)
class WeightSolution:
    """Simplex weights with solver diagnostics"""

    weights: np.ndarray
    intercept: float
    zeta: float
    objective_value: float
    iterations: int
    converged: bool
    labels: Tuple[Any, ...] = ()
    objective_trace: Tuple[float, ...] = ()

    def __post_init__(self) -> None:
        weights = np.array(self.weights, dtype=np.float64, copy=True)
        weights.setflags(write=False)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "labels", tuple(self.labels))

    def as_dict(self) -> Dict[Any, float]:
        labels = self.labels or tuple(range(len(self.weights)))
        return {label: float(w) for label, w in zip(labels, self.weights)}

    def to_frame(self, label_name: str = "unit") -> pd.DataFrame:
        labels = self.labels or tuple(range(len(self.weights)))
        return pd.DataFrame({label_name: list(labels), "weight": self.weights})

    def diagnostics(self) -> Dict[str, Any]:
        return {
            "zeta": float(self.zeta),
            "intercept": float(self.intercept),
            "objective_value": float(self.objective_value),
            "iterations": int(self.iterations),
            "converged": bool(self.converged),
            "n_weights": int(len(self.weights)),
            "n_nonzero": int(np.count_nonzero(self.weights)),
        }


def first_difference_sd(control_pre: np.ndarray) -> float:
    """Sample sd (n-1) of the period-to-period first differences of donor pre-period outcomes"""
    diffs = np.diff(np.asarray(control_pre, dtype=np.float64), axis=1).ravel()
    if diffs.size < 2:
        return 0.0
    return float(np.std(diffs, ddof=1))


def zeta_floor(values: np.ndarray) -> float:
    values = np.asarray(values, dtype=np.float64)
    return ZETA_FLOOR_FACTOR * (1.0 + (float(np.max(np.abs(values))) if values.size else 0.0))


def compute_zeta(control_pre: np.ndarray, n_treated: int = 1, n_post: int = 1) -> float:
    """
    Unit-weight regularization: (n_treated * n_post)^(1/4) * sd of first differences.

    Args:
        control_pre: donor x pre-period outcome matrix
        n_treated: number of treated units
        n_post: number of post periods

    Returns:
        zeta, replaced by a small positive floor when the first differences have no variance
    """
    control_pre = np.asarray(control_pre, dtype=np.float64)
    if control_pre.ndim != 2 or control_pre.shape[0] < 1:
        raise DataValidationError("compute_zeta needs a donor x pre-period matrix with at least one donor")
    if control_pre.shape[1] < 2:
        raise InsufficientPrePeriods(
            f"zeta needs at least 2 pre-periods, got {control_pre.shape[1]}; pass zeta explicitly")
    if not np.all(np.isfinite(control_pre)):
        raise NonFiniteInput("Control outcomes contain non-finite values")
    zeta = (n_treated * n_post) ** 0.25 * first_difference_sd(control_pre)
    if zeta <= 0.0:
        zeta = zeta_floor(control_pre)
        logger.debug(f"First differences have zero variance; using zeta floor {zeta:.3g}")
    return float(zeta)


def time_weight_zeta(control_pre: np.ndarray) -> float:
    """Tiny ridge for the time-weight problem so the solution is unique"""
    control_pre = np.asarray(control_pre, dtype=np.float64)
    zeta = TIME_ZETA_FACTOR * first_difference_sd(control_pre)
    return float(zeta) if zeta > 0.0 else zeta_floor(control_pre)


class _CenteredProblem:
    """Quadratic objective with the intercept profiled out"""

    def __init__(self, design: np.ndarray, target: np.ndarray, zeta: float, with_intercept: bool):
        self.n_rows, self.k = design.shape
        if with_intercept:
            self.a = design - design.mean(axis=0)
            self.b = target - target.mean()
        else:
            self.a = design
            self.b = target
        self.eta = zeta ** 2 * self.n_rows

    def objective(self, w: np.ndarray) -> float:
        r = self.a @ w - self.b
        return float(r @ r + self.eta * (w @ w))

    def gradient(self, w: np.ndarray) -> np.ndarray:
        return 2.0 * (self.a.T @ (self.a @ w - self.b)) + 2.0 * self.eta * w

    def solve_on_support(self, support: np.ndarray) -> Optional[np.ndarray]:
        """Exact minimizer over {w >= 0, sum w = 1, w = 0 off support} when the face optimum is feasible"""
        support = support.copy()
        while support.any():
            idx = np.flatnonzero(support)
            a_s = self.a[:, idx]
            m = idx.size
            kkt = np.zeros((m + 1, m + 1))
            kkt[:m, :m] = 2.0 * (a_s.T @ a_s + self.eta * np.eye(m))
            kkt[:m, m] = 1.0
            kkt[m, :m] = 1.0
            rhs = np.concatenate([2.0 * (a_s.T @ self.b), [1.0]])
            solution = np.linalg.lstsq(kkt, rhs, rcond=None)[0][:m]
            if not np.all(np.isfinite(solution)):
                return None
            if np.all(solution >= 0.0):
                w = np.zeros(self.k)
                w[idx] = solution
                total = w.sum()
                return w / total if total > 0 else None
            support[idx[int(np.argmin(solution))]] = False
        return None


def _frank_wolfe(problem: _CenteredProblem, tol: float, max_iter: int) -> Tuple[np.ndarray, int, bool, list]:
    k = problem.k
    w = np.full(k, 1.0 / k)
    f = problem.objective(w)
    trace = [f]
    floor = 1e-12 * max(float(problem.b @ problem.b), np.finfo(float).tiny)

    for iteration in range(1, max_iter + 1):
        g = problem.gradient(w)
        s = int(np.argmin(g))
        d_fw = -w.copy()
        d_fw[s] += 1.0
        gap_fw = -float(g @ d_fw)

        support = np.flatnonzero(w > 0.0)
        v = int(support[np.argmax(g[support])])
        d_away = w.copy()
        d_away[v] -= 1.0
        gap_away = -float(g @ d_away)

        if gap_fw <= 0.0 and gap_away <= 0.0:
            return w, iteration - 1, True, trace

        if gap_fw >= gap_away or w[v] >= 1.0:
            direction, gamma_max, away = d_fw, 1.0, False
        else:
            direction, gamma_max, away = d_away, w[v] / (1.0 - w[v]), True

        a_d = problem.a @ direction
        curvature = float(a_d @ a_d + problem.eta * (direction @ direction))
        slope = float(g @ direction)
        if curvature > 0.0:
            gamma = min(max(-slope / (2.0 * curvature), 0.0), gamma_max)
        else:
            gamma = gamma_max
        drop_step = away and gamma >= gamma_max

        w_new = w + gamma * direction
        if drop_step:
            w_new[v] = 0.0
        elif not away and gamma >= 1.0:
            w_new = np.zeros(k)
            w_new[s] = 1.0
        w_new = np.maximum(w_new, 0.0)
        w_new /= w_new.sum()

        f_new = problem.objective(w_new)
        if f_new > f:
            # rounding noise only; the previous iterate is the best available
            return w, iteration - 1, True, trace
        decrease = f - f_new
        w, f = w_new, f_new
        trace.append(f)
        if not drop_step and decrease <= tol * max(trace[-2], floor):
            return w, iteration, True, trace

    return w, max_iter, False, trace


def solve_simplex_regression(design: np.ndarray, target: np.ndarray, zeta: float = 0.0,
                             with_intercept: bool = True, tol: float = DEFAULT_TOL,
                             max_iter: int = DEFAULT_MAX_ITER, labels: Sequence[Any] = (),
                             record_trace: bool = False) -> WeightSolution:
    """
    Solve the simplex-constrained (ridge-penalized) regression of ``target`` on ``design`` columns.

    Args:
        design: rows x k matrix; each column is one candidate (donor or pre-period)
        target: vector of length rows
        zeta: ridge strength in outcome units, penalty zeta^2 * rows * ||w||^2
        with_intercept: fit a free intercept alongside the weights
        tol: relative objective decrease that counts as converged
        max_iter: iteration cap; hitting it returns converged=False
        labels: names attached to the weights
        record_trace: keep the objective after every iteration

    Returns:
        WeightSolution on the simplex; weights below 1e-10 are emitted as exact zeros
    """
    a = np.asarray(design, dtype=np.float64)
    b = np.asarray(target, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 1 or a.shape[0] != b.shape[0] or a.shape[1] < 1:
        raise DataValidationError(
            f"Design {a.shape} and target {b.shape} are not a rows x k / rows pair with k >= 1")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b)) and np.isfinite(zeta)):
        raise NonFiniteInput("Weight problem inputs contain non-finite values")
    if zeta < 0:
        raise DataValidationError(f"zeta must be nonnegative, got {zeta}")

    problem = _CenteredProblem(a, b, float(zeta), with_intercept)
    if problem.k == 1:
        w, iterations, converged, trace = np.ones(1), 0, True, [problem.objective(np.ones(1))]
    else:
        w, iterations, converged, trace = _frank_wolfe(problem, tol, max_iter)
        polished = problem.solve_on_support(w > 0.0)
        if polished is not None:
            f_polished = problem.objective(polished)
            if f_polished <= trace[-1]:
                w = polished
                if f_polished < trace[-1]:
                    trace.append(f_polished)
        if not converged:
            logger.warning(f"Weight solver hit max_iter={max_iter} before reaching tol={tol:g}")

    w = np.where(w < WEIGHT_EMIT_FLOOR, 0.0, w)
    w = w / w.sum()
    intercept = float(np.mean(b - a @ w)) if with_intercept else 0.0
    residual = intercept + a @ w - b
    objective = float(residual @ residual + zeta ** 2 * a.shape[0] * (w @ w))

    return WeightSolution(
        weights=w,
        intercept=intercept,
        zeta=float(zeta),
        objective_value=max(objective, 0.0),
        iterations=iterations,
        converged=converged,
        labels=tuple(labels),
        objective_trace=tuple(trace) if record_trace else (),
    )


def _require_donors_and_pre(panel: Panel) -> None:
    if not panel.donors:
        raise DataValidationError("Panel has no donor units")
    if not panel.pre_periods:
        raise DataValidationError("Panel has no pre-intervention period")


def solve_unit_weights(panel: Panel, zeta: float, tol: float = DEFAULT_TOL,
                       max_iter: int = DEFAULT_MAX_ITER) -> WeightSolution:
    """Unit weights: donor pre-period outcomes (rows = pre-periods) fitted to the treated pre-period path"""
    _require_donors_and_pre(panel)
    pre = panel.pre_mask
    design = panel.donor_matrix[:, pre].T
    target = panel.treated_series[pre]
    return solve_simplex_regression(design, target, zeta=zeta, with_intercept=True,
                                    tol=tol, max_iter=max_iter, labels=panel.donors)


def solve_time_weights(panel: Panel, tol: float = DEFAULT_TOL,
                       max_iter: int = DEFAULT_MAX_ITER) -> WeightSolution:
    """Time weights: each donor's post-period mean predicted from its pre-period outcomes"""
    _require_donors_and_pre(panel)
    pre = panel.pre_mask
    control_pre = panel.donor_matrix[:, pre]
    if control_pre.shape[1] == 1:
        return WeightSolution(weights=np.ones(1), intercept=0.0, zeta=0.0, objective_value=0.0,
                              iterations=0, converged=True, labels=panel.pre_periods)
    if pre.all():
        raise DataValidationError("Panel has no post-intervention period for time weights")
    target = panel.donor_matrix[:, ~pre].mean(axis=1)
    zeta = time_weight_zeta(control_pre)
    return solve_simplex_regression(control_pre, target, zeta=zeta, with_intercept=True,
                                    tol=tol, max_iter=max_iter, labels=panel.pre_periods)
