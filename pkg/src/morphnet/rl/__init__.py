"""PPO training with growth events at rollout boundaries."""

from .buffer import BufferStateError, RolloutBuffer, compute_gae
from .ppo import ConfigError, PPOConfig, clipped_surrogate, normalize_advantages, ppo_loss, ppo_update
from .trainer import GROWTH_FIELDS, METRIC_FIELDS, EvalResult, Trainer, TrainMetrics, evaluate, train

__all__ = [
    "BufferStateError",
    "ConfigError",
    "EvalResult",
    "GROWTH_FIELDS",
    "METRIC_FIELDS",
    "PPOConfig",
    "RolloutBuffer",
    "TrainMetrics",
    "Trainer",
    "clipped_surrogate",
    "compute_gae",
    "evaluate",
    "normalize_advantages",
    "ppo_loss",
    "ppo_update",
    "train",
]
