"""PPO with a scheduled (constant, linear or exponential) clipping range."""
from .envs import Acrobot, CartPole, Pendulum, VecEnv, make_env, make_vec_env
from .estimator import ClippedPPO
from .exceptions import TrainingError, UsageError
from .ppo import LossReport, MetricsRow, PpoConfig, PpoTrainer, clip_fraction, clipped_surrogate, ratio, total_loss
from .rollout import EpisodeStats, RolloutBatch, compute_gae, minibatches
from .schedules import ClipSchedule, epsilon_at

__version__ = "0.1.0"

__all__ = [
    "Acrobot",
    "CartPole",
    "ClipSchedule",
    "ClippedPPO",
    "EpisodeStats",
    "LossReport",
    "MetricsRow",
    "Pendulum",
    "PpoConfig",
    "PpoTrainer",
    "RolloutBatch",
    "TrainingError",
    "UsageError",
    "VecEnv",
    "clip_fraction",
    "clipped_surrogate",
    "compute_gae",
    "epsilon_at",
    "make_env",
    "make_vec_env",
    "minibatches",
    "ratio",
    "total_loss",
]
