#!/usr/bin/env python3
"""
Batch commands: estimate, placebo, figures, sensitivity, simulate, validate.

Each ``cmd_*`` takes a validated RunConfig, writes its artifacts into the output directory and
returns the process exit status. ``run_command`` maps toolkit errors to exit codes and writes
the machine-readable error record to stderr.
"""
import json
import logging
import sys
from typing import Callable, Dict, Optional, TextIO

import pandas as pd

from src.config import RunConfig
from src.core.analysis.engine import AnalysisEngine
from src.core.analysis.estimators import EstimateResult, Method
from src.core.analysis.inference import inference_payload
from src.core.data.donor_pool import write_donor_list
from src.core.data.panel_store import Panel
from src.core.errors import DegenerateDistribution, InsufficientDonors, ToolkitError
from src.core.reporting.figures import implied_time_weights, implied_unit_weights, render_svg
from src.utils.file_handler import FileHandler

logger = logging.getLogger(__name__)


def _file_handler(run: RunConfig) -> FileHandler:
    handler = FileHandler(str(run.output_directory))
    if run.panel_path is not None:
        handler.require_input(run.panel_path, "panel CSV")
    if run.characteristics_path is not None:
        handler.require_input(run.characteristics_path, "characteristics CSV")
    if run.reference_path is not None:
        handler.require_input(run.reference_path, "reference CSV")
    return handler


def _unit_weights_frame(panel: Panel, result: EstimateResult) -> pd.DataFrame:
    if result.unit_weights is not None:
        return result.unit_weights.to_frame("unit")
    return pd.DataFrame({"unit": list(panel.donors), "weight": implied_unit_weights(panel, result)})


def _time_weights_frame(panel: Panel, result: EstimateResult) -> pd.DataFrame:
    if result.time_weights is not None:
        return result.time_weights.to_frame("period")
    return pd.DataFrame({"period": list(panel.pre_periods), "weight": implied_time_weights(panel, result)})


def _input_files(handler: FileHandler, run: RunConfig) -> Dict[str, dict]:
    inputs = {"panel": handler.get_file_info(run.panel_path)}
    if run.characteristics_path is not None:
        inputs["characteristics"] = handler.get_file_info(run.characteristics_path)
    return inputs


def cmd_estimate(run: RunConfig) -> int:
    """estimate.json, weights_unit.csv, weights_time.csv, inference.json, donors.csv and donor_summary.csv"""
    handler = _file_handler(run)
    engine = AnalysisEngine(run)
    panel = engine.analysis_panel()
    result = engine.estimate(panel)

    payload = result.to_dict()
    payload["inputs"] = _input_files(handler, run)
    handler.write_json("estimate.json", payload)
    handler.write_csv("weights_unit.csv", _unit_weights_frame(panel, result))
    handler.write_csv("weights_time.csv", _time_weights_frame(panel, result))
    write_donor_list(panel.donors, handler.path("donors.csv"))
    summary = engine.donor_summary(list(panel.donors))
    if summary is not None:
        handler.write_csv("donor_summary.csv", summary.reset_index(names="statistic"))

    try:
        placebo = engine.placebo(panel, result)
    except InsufficientDonors as e:
        handler.write_json("inference.json", {"available": False, "reason": e.to_dict()})
        return 0
    if placebo.inference is None:
        handler.write_json("inference.json", {"available": False, "notes": placebo.notes})
    else:
        payload = inference_payload(placebo.inference, placebo.distribution)
        payload["available"] = True
        handler.write_json("inference.json", payload)
    return 0


def cmd_placebo(run: RunConfig) -> int:
    """placebo_distribution.csv, inference.json; SCM adds rmspe_ratio.json, overfit.json, scm_ratio_table.csv"""
    handler = _file_handler(run)
    engine = AnalysisEngine(run)
    placebo = engine.placebo()

    handler.write_csv("placebo_distribution.csv", placebo.distribution.to_frame())
    if placebo.rmspe is not None:
        handler.write_json("rmspe_ratio.json", placebo.rmspe.model_dump(mode="json"))
        handler.write_json("overfit.json", placebo.overfit.model_dump(mode="json"))
        handler.write_csv("scm_ratio_table.csv", pd.DataFrame([{
            "specification": run.method.value,
            "estimate": placebo.estimate.tau_hat,
            "treated_ratio": placebo.rmspe.treated_ratio,
            "ratio_min": placebo.rmspe.placebo_min,
            "ratio_max": placebo.rmspe.placebo_max,
            "p_value": placebo.rmspe.p_value,
            "n_pre": placebo.estimate.n_pre,
            "n_donors": placebo.estimate.n_donors,
        }]))
    if placebo.inference is None:
        raise DegenerateDistribution("; ".join(placebo.notes) or "Placebo inference unavailable")
    handler.write_json("inference.json", inference_payload(placebo.inference, placebo.distribution))
    return 0


def cmd_figures(run: RunConfig) -> int:
    """figure_trend.csv, figure_fit.csv, figure_balance.csv and optionally figures.svg"""
    handler = _file_handler(run)
    frames = AnalysisEngine(run).figures()
    for name, frame in frames.items():
        handler.write_csv(f"figure_{name}.csv", frame)
    if run.render_figures:
        render_svg(frames["trend"], frames["fit"], frames["balance"], handler.path("figures.svg"))
    return 0


def cmd_sensitivity(run: RunConfig) -> int:
    """grid.csv, grid.json and, for SCM, scm_ratio_table.csv"""
    handler = _file_handler(run)
    for source in run.outcomes.values():
        handler.require_input(source.panel_path, "outcome panel CSV")
    result = AnalysisEngine(run).sensitivity()
    handler.write_csv("grid.csv", result.to_frame())
    handler.write_json("grid.json", result.to_dict())
    if run.method == Method.SCM:
        handler.write_csv("scm_ratio_table.csv", result.scm_ratio_table())
    return 0


def cmd_simulate(run: RunConfig) -> int:
    """simulation_summary.json and simulation_summary.csv"""
    handler = FileHandler(str(run.output_directory))
    summary = AnalysisEngine(run).simulate()
    payload = summary.model_dump(mode="json")
    payload["spec"] = run.simulation.model_dump(mode="json")
    handler.write_json("simulation_summary.json", payload)
    handler.write_csv("simulation_summary.csv", summary.to_frame())
    return 0


def cmd_validate(run: RunConfig) -> int:
    """validation.json; exit 3 when any input fails validation"""
    handler = _file_handler(run)
    outcome = AnalysisEngine(run).validate()
    handler.write_json("validation.json", outcome.payload)
    return 0 if outcome.ok else 3


COMMANDS: Dict[str, Callable[[RunConfig], int]] = {
    "estimate": cmd_estimate,
    "placebo": cmd_placebo,
    "figures": cmd_figures,
    "sensitivity": cmd_sensitivity,
    "simulate": cmd_simulate,
    "validate": cmd_validate,
}


def report_error(error: ToolkitError, stream: Optional[TextIO] = None) -> int:
    stream = stream or sys.stderr
    stream.write(json.dumps(error.to_dict(), sort_keys=True) + "\n")
    return error.exit_code


def run_command(name: str, run: RunConfig) -> int:
    """Run one command; toolkit errors become their exit code plus an error record on stderr"""
    try:
        logger.info(f"Running {name} ({run.method.value}) -> {run.output_directory}")
        return COMMANDS[name](run)
    except ToolkitError as e:
        logger.error(f"{name} failed: {e.code}: {e}")
        return report_error(e)
    except Exception as e:
        logger.exception(f"{name} failed unexpectedly: {e}")
        sys.stderr.write(json.dumps({"error": type(e).__name__, "message": str(e), "exit_code": 1},
                                    sort_keys=True) + "\n")
        return 1
