"""Blockchain-enabled user-centric MEC: simulation and joint optimization."""

from .scenario import (
    ConfigError,
    SystemConfig,
    ApProfile,
    UserTask,
    Scenario,
    generate_scenario,
    load_config,
    save_scenario,
    load_scenario,
)
from .channel import ClusterAssignment, frozen_sinr_table, rate_coefficients
from .energetics import EnergyBreakdown, DelayBreakdown, evaluate, total_energy

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "SystemConfig",
    "ApProfile",
    "UserTask",
    "Scenario",
    "generate_scenario",
    "load_config",
    "save_scenario",
    "load_scenario",
    "ClusterAssignment",
    "frozen_sinr_table",
    "rate_coefficients",
    "EnergyBreakdown",
    "DelayBreakdown",
    "evaluate",
    "total_energy",
    "__version__",
]
