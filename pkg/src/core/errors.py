"""
Error hierarchy for the toolkit.

Every error carries a stable ``code`` (reported in the CLI's error JSON) and the
process exit status the CLI should use for it.
"""
from typing import Any, Dict, Optional


class ToolkitError(Exception):
    """Base class for all toolkit failures"""

    code = "ToolkitError"
    exit_code = 1

    def __init__(self, message: str, *, unit: Optional[str] = None, period: Optional[int] = None):
        super().__init__(message)
        self.message = message
        self.unit = unit
        self.period = period

    def to_dict(self) -> Dict[str, Any]:
        """Machine-readable representation written to stderr by the CLI"""
        payload: Dict[str, Any] = {
            "error": self.code,
            "message": self.message,
            "exit_code": self.exit_code,
        }
        if self.unit is not None:
            payload["unit"] = self.unit
        if self.period is not None:
            payload["period"] = self.period
        return payload


class ConfigError(ToolkitError, ValueError):
    code = "ConfigError"
    exit_code = 2


class DataValidationError(ToolkitError, ValueError):
    code = "DataValidationError"
    exit_code = 3


class SolverError(ToolkitError, ArithmeticError):
    code = "SolverError"
    exit_code = 4


# Data errors

class UnbalancedPanel(DataValidationError):
    code = "UnbalancedPanel"


class DivisionByZero(DataValidationError):
    code = "DivisionByZero"


class UnknownUnit(DataValidationError):
    code = "UnknownUnit"


class DuplicateCell(DataValidationError):
    code = "DuplicateCell"


class IncompleteCohort(DataValidationError):
    code = "IncompleteCohort"


class NoPrePeriod(DataValidationError):
    code = "NoPrePeriod"


class NoPostPeriod(DataValidationError):
    code = "NoPostPeriod"


class InsufficientPrePeriods(DataValidationError):
    code = "InsufficientPrePeriods"


class EmptyDonorPool(DataValidationError):
    code = "EmptyDonorPool"


class InvalidExclusion(DataValidationError):
    code = "InvalidExclusion"


class NonFiniteInput(DataValidationError):
    code = "NonFiniteInput"


class PanelValidationError(DataValidationError):
    """Raised when a panel fails validation; carries the full report"""

    code = "PanelValidationError"

    def __init__(self, message: str, report: Any = None, **kwargs: Any):
        super().__init__(message, **kwargs)
        self.report = report

    def to_dict(self) -> Dict[str, Any]:
        payload = super().to_dict()
        if self.report is not None:
            payload["report"] = self.report.model_dump(mode="json")
        return payload


# Config errors

class InvalidCriteria(ConfigError):
    code = "InvalidCriteria"


class InsufficientDonors(ConfigError):
    code = "InsufficientDonors"


class UnknownDonorPool(ConfigError):
    code = "UnknownDonorPool"


class TooLargeForOracle(ConfigError):
    code = "TooLargeForOracle"


# Solver / inference errors

class DegenerateDistribution(SolverError):
    code = "DegenerateDistribution"
