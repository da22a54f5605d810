"""Scenarios, measurement synthesis, baselines and the Monte Carlo harness."""

from .baselines import BaselineConfig, run_baseline
from .measurements import MeasurementFrame, OutlierSpike, read_log, synthesize_measurements, tetra_stream, write_log
from .montecarlo import ExperimentConfig, TrialResult, aggregate, rmse, run_monte_carlo
from .scenario import Scenario, ScenarioConfig, generate_scenario

__all__ = [
    "BaselineConfig",
    "ExperimentConfig",
    "MeasurementFrame",
    "OutlierSpike",
    "Scenario",
    "ScenarioConfig",
    "TrialResult",
    "aggregate",
    "generate_scenario",
    "read_log",
    "rmse",
    "run_baseline",
    "run_monte_carlo",
    "synthesize_measurements",
    "tetra_stream",
    "write_log",
]
