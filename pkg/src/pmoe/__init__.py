"""Gaussian mixture policies for actor-critic RL with frequency-based routing."""

from .algos import (EvalResult, TrainResult, evaluate, load_actor, make_actor,
                    train, train_ppo, train_sac)
from .config import (ALGORITHMS, MODES, ROUTERS, RunConfig, TrainerConfig,
                     load_config, parse_config, save_config, serialize_config)
from .critic import TwinCritic, ValueHead, bellman_target, critic_loss, gae_advantages
from .envs import BanditEnv, EnvStep, TargetReachingEnv, make_env
from .errors import ConfigError, DomainError, TrainingError, UsageError
from .metrics import (MetricLog, auc, density_dip, eval_curve,
                      exploration_coverage, moving_average,
                      plot_learning_curves, primitive_separation, read_metrics,
                      routing_probability_trace)
from .policy import MixtureOutput, MixturePolicy, SampledAction, SquashedGaussianPolicy
from .primitives import PrimitiveLossSpec, primitive_loss
from .replay import Batch, ReplayBuffer, Transition
from .routers import (BestPrimitiveIndicator, compute_v, freq_loss, freq_report,
                      gating_compose, gumbel_router_sample,
                      reinforce_router_loss)

__version__ = "0.1.0"

__all__ = [
    "ALGORITHMS", "MODES", "ROUTERS",
    "BanditEnv", "Batch", "BestPrimitiveIndicator", "ConfigError",
    "DomainError", "EnvStep", "EvalResult", "MetricLog", "MixtureOutput",
    "MixturePolicy", "PrimitiveLossSpec", "ReplayBuffer", "RunConfig",
    "SampledAction", "SquashedGaussianPolicy", "TargetReachingEnv",
    "TrainResult", "TrainerConfig", "TrainingError", "Transition",
    "TwinCritic", "UsageError", "ValueHead", "auc", "bellman_target",
    "compute_v", "critic_loss", "density_dip", "eval_curve", "evaluate",
    "exploration_coverage", "freq_loss", "freq_report", "gae_advantages",
    "gating_compose", "gumbel_router_sample", "load_actor", "load_config",
    "make_actor", "make_env", "moving_average", "parse_config",
    "plot_learning_curves", "primitive_loss", "primitive_separation",
    "read_metrics", "reinforce_router_loss", "routing_probability_trace",
    "save_config", "serialize_config", "train", "train_ppo", "train_sac",
]
