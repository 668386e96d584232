"""Clipped-surrogate PPO update for the dense actor-critic."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from typing import Dict

import numpy as np

from .. import distributions as dist
from ..nncore import AdamState, Network, NumericError, adam_step, clip_by_global_norm, gradients
from .buffer import BufferStateError, RolloutBuffer


class ConfigError(ValueError):
    pass


@dataclass
class PPOConfig:
    gamma: float = 0.99
    lam: float = 0.95
    clip_eps: float = 0.2
    lr: float = 3e-4
    epochs: int = 4
    minibatch_size: int = 250
    rollout_len: int = 125
    n_envs: int = 8
    entropy_coef: float = 0.01
    value_coef: float = 0.5
    max_grad_norm: float = 0.5
    total_steps: int = 200_000
    seed: int = 0

    def __post_init__(self):
        self.validate()

    @property
    def steps_per_iteration(self) -> int:
        return self.rollout_len * self.n_envs

    def validate(self) -> None:
        if not 0.0 < self.gamma <= 1.0:
            raise ConfigError(f"gamma must lie in (0, 1], got {self.gamma}")
        if not 0.0 <= self.lam <= 1.0:
            raise ConfigError(f"lam must lie in [0, 1], got {self.lam}")
        for name in ("clip_eps", "max_grad_norm"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if not self.lr >= 0:
            raise ConfigError(f"lr must be non-negative, got {self.lr}")
        for name in ("epochs", "minibatch_size", "rollout_len", "n_envs", "total_steps"):
            if int(getattr(self, name)) != getattr(self, name) or getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be a positive integer, got {getattr(self, name)}")
        for name in ("entropy_coef", "value_coef"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative, got {getattr(self, name)}")
        if self.steps_per_iteration % self.minibatch_size:
            raise ConfigError(
                f"minibatch_size {self.minibatch_size} must divide rollout_len * n_envs = {self.steps_per_iteration}"
            )
        if self.total_steps % self.steps_per_iteration:
            raise ConfigError(
                f"total_steps {self.total_steps} must be a multiple of rollout_len * n_envs = {self.steps_per_iteration}"
            )

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def field_names(cls):
        return [f.name for f in fields(cls)]


def clipped_surrogate(ratio, adv, clip_eps):
    """Per-sample min(rho * A, clip(rho, 1 - eps, 1 + eps) * A)."""
    return np.minimum(ratio * adv, np.clip(ratio, 1.0 - clip_eps, 1.0 + clip_eps) * adv)


def normalize_advantages(adv: np.ndarray) -> np.ndarray:
    if adv.size < 2:
        return adv - adv.mean()
    return (adv - adv.mean()) / (adv.std() + 1e-8)


def ppo_loss(net: Network, cfg: PPOConfig, actions, old_log_probs, advantages, returns, stats=None):
    """Loss closure for ``nncore.gradients``; ``stats`` collects diagnostics."""
    kind = net.policy_kind
    m = len(advantages)

    def loss_fn(pp, value, log_std):
        logp = dist.log_prob(kind, pp, log_std, actions)
        log_ratio = logp - old_log_probs
        ratio = np.exp(log_ratio)
        unclipped = ratio * advantages
        clipped = np.clip(ratio, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps) * advantages
        surrogate = np.minimum(unclipped, clipped)
        ent = dist.entropy(kind, pp, log_std)
        verr = value - returns

        policy_loss = -float(np.mean(surrogate))
        value_loss = float(np.mean(verr * verr))
        mean_ent = float(np.mean(ent))
        loss = policy_loss + cfg.value_coef * value_loss - cfg.entropy_coef * mean_ent

        # d(rho * A)/d(log pi) = rho * A; the clipped branch carries no gradient
        d_logp = -np.where(unclipped <= clipped, unclipped, 0.0) / m
        d_ent = np.full(m, -cfg.entropy_coef / m)
        d_pp, d_log_std = dist.log_prob_and_entropy_grads(kind, pp, log_std, actions, d_logp, d_ent)
        d_value = cfg.value_coef * 2.0 * verr / m

        if stats is not None:
            stats["policy_loss"].append(policy_loss)
            stats["value_loss"].append(value_loss)
            stats["entropy"].append(mean_ent)
            stats["approx_kl"].append(float(np.mean((ratio - 1.0) - log_ratio)))
            stats["clip_fraction"].append(float(np.mean(np.abs(ratio - 1.0) > cfg.clip_eps)))
        return loss, d_pp, d_value, d_log_std

    return loss_fn


def ppo_update(
    net: Network,
    adam: AdamState,
    buffer: RolloutBuffer,
    cfg: PPOConfig,
    rng: np.random.Generator,
) -> Dict[str, float]:
    """``cfg.epochs`` passes of shuffled minibatch updates; mutates ``net`` and ``adam``."""
    if buffer.advantages is None:
        raise BufferStateError("compute_gae must run before ppo_update")
    obs = buffer.flat("obs")
    actions = buffer.flat("actions")
    old_logp = buffer.flat("log_probs")
    adv = buffer.flat("advantages")
    ret = buffer.flat("returns")
    n = len(adv)
    stats = {k: [] for k in ("policy_loss", "value_loss", "entropy", "approx_kl", "clip_fraction", "grad_norm")}
    params = net.params()
    batch = 0
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.minibatch_size):
            idx = order[start:start + cfg.minibatch_size]
            loss_fn = ppo_loss(net, cfg, actions[idx], old_logp[idx], normalize_advantages(adv[idx]), ret[idx], stats)
            try:
                _, grads = gradients(net, obs[idx], loss_fn)
            except NumericError as e:
                raise NumericError(f"minibatch {batch}: {e}") from e
            grads, norm = clip_by_global_norm(grads, cfg.max_grad_norm)
            stats["grad_norm"].append(norm)
            adam_step(params, grads, adam, cfg.lr)
            batch += 1
    return {k: float(np.mean(v)) for k, v in stats.items()}
