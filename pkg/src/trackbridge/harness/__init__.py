"""Scenario runner, cycle log, capture files and plots."""

from .logio import RunReport, analyze, compute_report, parse_log, read_log
from .runner import InvariantViolation, RunResult, replay_capture, run_scenario
from .scenario import ScenarioParseError, load_scenario, parse_scenario

__all__ = [
    "InvariantViolation",
    "RunReport",
    "RunResult",
    "ScenarioParseError",
    "analyze",
    "compute_report",
    "load_scenario",
    "parse_log",
    "parse_scenario",
    "read_log",
    "replay_capture",
    "run_scenario",
]
