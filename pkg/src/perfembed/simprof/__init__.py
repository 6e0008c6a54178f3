"""Deterministic machine simulation: counters, dynamic profile and targets."""
from .machine import DESK_MACHINE, COUNTERS, PROFILE_COLUMNS, STATS, TARGETS, CacheLevel, MachineConfig
from .simulate import (
    CounterSet,
    InputBindings,
    SimResult,
    SimState,
    SimulationError,
    aggregate_profile,
    compute_targets,
    export_csv,
    measure,
    measure_full,
    simulate,
)

__all__ = [
    "DESK_MACHINE", "COUNTERS", "PROFILE_COLUMNS", "STATS", "TARGETS", "CacheLevel", "MachineConfig", "CounterSet",
    "InputBindings", "SimResult", "SimState", "SimulationError", "aggregate_profile",
    "compute_targets", "export_csv", "measure", "measure_full", "simulate",
]
