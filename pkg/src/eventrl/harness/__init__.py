from .config import ConfigError, RunConfig, Setup, load_config, parse_config
from .experiments import (
    ScalingRow,
    SweepResult,
    SweepRow,
    TrajectoryResult,
    iterations_to_threshold,
    loss_at_comm,
    run_agent_scaling,
    run_sweep,
    run_trajectory,
)

__all__ = [
    "ConfigError",
    "RunConfig",
    "Setup",
    "load_config",
    "parse_config",
    "ScalingRow",
    "SweepResult",
    "SweepRow",
    "TrajectoryResult",
    "iterations_to_threshold",
    "loss_at_comm",
    "run_agent_scaling",
    "run_sweep",
    "run_trajectory",
]
