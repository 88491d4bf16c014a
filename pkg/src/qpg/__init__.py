"""Quantile-criterion policy-gradient reinforcement learning.

Optimizes the alpha-quantile of the cumulative reward instead of its mean,
using a two-timescale on-policy algorithm and an off-policy accelerated
variant, with mean-criterion baselines for comparison.
"""

from .algos import (PPO, QPO, QPPO, SPSA, Reinforce, Streams,
                    clipped_surrogate, descent_direction, importance_ratio,
                    rollout)
from .envs import (DemandModel, EchelonSpec, InventoryEnv, PortfolioEnv,
                   ZeroMeanEnv)
from .errors import ConfigError, TrainingError, UsageError
from .harness import compare_runs, run_experiment
from .policy import (Baseline, CategoricalPolicy, GaussianMeanPolicy,
                     MultiDiscretePolicy, SimplexPolicy)
from .presets import default_config, make_algo, make_env, make_policy
from .quantile import QuantileBank, QuantileTracker, StepSchedule, warm_start

__version__ = "0.1.0"

__all__ = [
    "PPO", "QPO", "QPPO", "SPSA", "Reinforce", "Streams",
    "clipped_surrogate", "descent_direction", "importance_ratio", "rollout",
    "DemandModel", "EchelonSpec", "InventoryEnv", "PortfolioEnv",
    "ZeroMeanEnv", "ConfigError", "TrainingError", "UsageError",
    "compare_runs", "run_experiment", "Baseline", "CategoricalPolicy",
    "GaussianMeanPolicy", "MultiDiscretePolicy", "SimplexPolicy",
    "default_config", "make_algo", "make_env", "make_policy",
    "QuantileBank", "QuantileTracker", "StepSchedule", "warm_start",
]
