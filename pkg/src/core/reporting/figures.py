"""
Figure-ready series and an optional static SVG render.

Three layouts:
  trend    treated unit vs donor average (and an optional reference trend) with the
           treatment start as marker
  fit      treated vs weighted synthetic series, with the time weights per pre-period
  balance  per-donor pre-period level after time weighting, against the treated unit
"""
import logging
from pathlib import Path
from typing import Optional, Union

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402

from ..analysis.estimators import EstimateResult, Method  # noqa: E402
from ..data.panel_store import CsvSource, Panel, read_csv_source  # noqa: E402
from ..errors import DataValidationError  # noqa: E402

logger = logging.getLogger(__name__)

DONOR_AVERAGE = "donor_average"
REFERENCE = "reference"


def load_reference_series(source: CsvSource, period_column: str = "period",
                          value_column: str = "outcome") -> pd.Series:
    """Reference trend (e.g. a statewide rate) as a period-indexed series"""
    frame = read_csv_source(source)
    missing = [c for c in (period_column, value_column) if c not in frame.columns]
    if missing:
        raise DataValidationError(f"Reference CSV is missing columns: {missing}")
    series = pd.Series(frame[value_column].astype(float).to_numpy(),
                       index=frame[period_column].astype(int).to_numpy(), name=REFERENCE)
    return series.sort_index()


def trend_series(panel: Panel, reference: Optional[pd.Series] = None) -> pd.DataFrame:
    """Long table (series, period, value, treatment_start)"""
    rows = []
    donor_average = panel.donor_matrix.mean(axis=0)
    for j, period in enumerate(panel.periods):
        rows.append((panel.treated_unit, period, float(panel.treated_series[j])))
        rows.append((DONOR_AVERAGE, period, float(donor_average[j])))
    if reference is not None:
        rows.extend((REFERENCE, int(p), float(v)) for p, v in reference.items() if int(p) in panel.periods)
    frame = pd.DataFrame(rows, columns=["series", "period", "value"])
    frame["treatment_start"] = panel.treatment_start
    return frame


def implied_time_weights(panel: Panel, result: EstimateResult) -> np.ndarray:
    """Solved time weights; uniform for DID and zero for SCM, which average no pre-periods"""
    if result.time_weights is not None:
        return np.asarray(result.time_weights.weights)
    n_pre = int(panel.pre_mask.sum())
    if result.method == Method.SCM:
        return np.zeros(n_pre)
    return np.full(n_pre, 1.0 / n_pre)


def implied_unit_weights(panel: Panel, result: EstimateResult) -> np.ndarray:
    """Solved unit weights, uniform when the method has none (DID)"""
    if result.unit_weights is not None:
        return np.asarray(result.unit_weights.weights)
    n_donors = len(panel.donors)
    return np.full(n_donors, 1.0 / n_donors)



def fit_series(panel: Panel, result: EstimateResult) -> pd.DataFrame:
    """Per period: treated, synthetic (weighted donors + fit offset), time weight (0 after start)"""
    omega = implied_unit_weights(panel, result)
    lam = implied_time_weights(panel, result)
    synthetic = omega @ panel.donor_matrix + result.fit_offset
    time_weight = np.zeros(len(panel.periods))
    time_weight[panel.pre_mask] = lam
    return pd.DataFrame({
        "period": list(panel.periods),
        "treated": panel.treated_series,
        "synthetic": synthetic,
        "time_weight": time_weight,
        "treatment_start": panel.treatment_start,
    })


def balance_series(panel: Panel, result: EstimateResult) -> pd.DataFrame:
    """
    One row per donor: unit weight, time-weighted pre-period level and its gap to the treated unit.

    Without positive time weights (SCM) levels are plain pre-period means.
    """
    lam = implied_time_weights(panel, result)
    if lam.sum() <= 0:
        lam = np.full(lam.size, 1.0 / lam.size)
    omega = implied_unit_weights(panel, result)
    pre = panel.pre_mask
    donor_levels = panel.donor_matrix[:, pre] @ lam
    treated_level = float(panel.treated_series[pre] @ lam)
    return pd.DataFrame({
        "unit": list(panel.donors),
        "unit_weight": omega,
        "weighted_pre_level": donor_levels,
        "treated_weighted_pre_level": treated_level,
        "gap": donor_levels - treated_level,
    })


def render_svg(trend: pd.DataFrame, fit: pd.DataFrame, balance: pd.DataFrame,
               path: Union[str, Path], title: Optional[str] = None) -> Path:
    """Draw the three panels side by side into one SVG file"""
    plt.rcParams["svg.hashsalt"] = "sdid-toolkit"
    fig, axes = plt.subplots(1, 3, figsize=(15, 4.5))
    start = int(trend["treatment_start"].iloc[0]) if not trend.empty else None

    ax = axes[0]
    for name, group in trend.groupby("series", sort=True):
        ax.plot(group["period"], group["value"], marker="o", label=str(name))
    if start is not None:
        ax.axvline(start - 0.5, linestyle="--", color="grey")
    ax.set_title("Trend")
    ax.legend(fontsize="small")

    ax = axes[1]
    ax.plot(fit["period"], fit["treated"], marker="o", label="treated")
    ax.plot(fit["period"], fit["synthetic"], marker="s", linestyle="--", label="synthetic")
    if start is not None:
        ax.axvline(start - 0.5, linestyle="--", color="grey")
    bars = ax.twinx()
    bars.bar(fit["period"], fit["time_weight"], alpha=0.3, color="grey")
    bars.set_ylim(0, 1)
    bars.set_ylabel("time weight")
    ax.set_title("Weighted fit")
    ax.legend(fontsize="small")

    ax = axes[2]
    ordered = balance.sort_values("gap")
    ax.barh(ordered["unit"], ordered["gap"], color=np.where(ordered["unit_weight"] > 0, "tab:blue", "lightgrey"))
    ax.axvline(0.0, color="black", linewidth=0.8)
    ax.set_title("Pre-period balance")
    ax.tick_params(axis="y", labelsize=6)

    if title:
        fig.suptitle(title)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    logger.info(f"Rendered figures to {path}")
    return path
