"""Discrete-event simulator comparing a centralized SDN IoT controller with a
ledger-backed distributed variant."""
from .scenario import Scenario, ScenarioError, load_scenario, parse_scenario
from .sim import RunResult, World, run_scenario, run_variant

__version__ = "0.1.0"

__all__ = [
    "Scenario", "ScenarioError", "load_scenario", "parse_scenario",
    "RunResult", "World", "run_scenario", "run_variant",
]
