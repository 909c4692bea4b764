"""Optimal dividend barriers for a Brownian surplus whose payouts are
discounted through a geometric Levy exchange rate."""
from .control import (
    IllPosedError,
    Mode,
    ProblemSpec,
    eval_F,
    eval_G,
    eval_value_full,
    restricted_solution,
    sensitivity_scan,
    solve,
    unrestricted_solution,
)
from .levy import LevyTriplet, beta, is_well_posed
from .montecarlo import SimConfig, simulate_value
from .oracle import fd_policy_iteration_oracle

__version__ = "0.1.0"

__all__ = [
    "IllPosedError",
    "LevyTriplet",
    "Mode",
    "ProblemSpec",
    "SimConfig",
    "beta",
    "eval_F",
    "eval_G",
    "eval_value_full",
    "fd_policy_iteration_oracle",
    "is_well_posed",
    "restricted_solution",
    "sensitivity_scan",
    "simulate_value",
    "solve",
    "unrestricted_solution",
]
