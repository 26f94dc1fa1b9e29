"""Deterministic multi-UAV swarm control simulator.

Compute units plan jerk-limited trajectories for the vehicles through
separating-plane constrained QPs, coordinate through an event trigger, and
survive message loss by tracking every plan a vehicle might be flying.
"""
from ._accel import NUMBA_ENABLED
from .nominal import (
    InputSequence,
    NominalState,
    ReferenceTrajectory,
    TrajectoryMetadata,
    hover_trajectory,
    propagate,
    sample,
    shift,
    terminal_rest,
)
from .qp import OptimizationConfig, default_config
from .scenarios import Scenario, make_scenario
from .harness import (
    check_discrete_collisions,
    check_theorem_oracles,
    estimate_continuous_margin,
    metrics,
    run,
    write_trace,
)

__all__ = [
    "NUMBA_ENABLED",
    "InputSequence",
    "NominalState",
    "OptimizationConfig",
    "ReferenceTrajectory",
    "Scenario",
    "TrajectoryMetadata",
    "check_discrete_collisions",
    "check_theorem_oracles",
    "default_config",
    "estimate_continuous_margin",
    "hover_trajectory",
    "make_scenario",
    "metrics",
    "propagate",
    "run",
    "sample",
    "shift",
    "terminal_rest",
    "write_trace",
]

__version__ = "0.1.0"
