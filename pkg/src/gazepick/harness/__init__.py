"""Scenario generation, replay, metrics and benchmarking."""
from .run import Metrics, UNDEFINED, compute_metrics, remove_duplicates, run_scenario, write_metrics, write_run
from .scenario import CaseKind, Scenario, ScenarioError, Truth, generate_su_case, load_scenario, save_scenario

__all__ = [
    "CaseKind",
    "Metrics",
    "Scenario",
    "ScenarioError",
    "Truth",
    "UNDEFINED",
    "compute_metrics",
    "generate_su_case",
    "load_scenario",
    "remove_duplicates",
    "run_scenario",
    "save_scenario",
    "write_metrics",
    "write_run",
]
