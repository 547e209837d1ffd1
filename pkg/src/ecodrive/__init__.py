"""Eco-driving at a signalized intersection: simulator, baselines, trainer."""

from .config import CommsConfig, RewardCoeffs, ScenarioConfig, TrainConfig, load_config
from .dynamics import IdmParams, VehicleState
from .energy import Co2Coeffs, EnergyParams, co2_rate, fuel_rate, power, resistance
from .environment import Observation, PhaseGroupStats, World, reset, reward
from .harness import MetricsReport, SweepResult, penetration_sweep, run_scenario
from .scenario import ArrivalSchedule, RoadNetwork, SignalPlan, build_scenario, signal_state

__all__ = [
    "ArrivalSchedule", "Co2Coeffs", "CommsConfig", "EnergyParams", "IdmParams",
    "MetricsReport", "Observation", "PhaseGroupStats", "RewardCoeffs", "RoadNetwork",
    "ScenarioConfig", "SignalPlan", "SweepResult", "TrainConfig", "VehicleState",
    "World", "build_scenario", "co2_rate", "fuel_rate", "load_config",
    "penetration_sweep", "power", "reset", "resistance", "reward", "run_scenario",
    "signal_state",
]

__version__ = "0.1.0"
