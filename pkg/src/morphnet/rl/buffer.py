"""Fixed-horizon on-policy rollout storage and generalized advantage estimation."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np


class BufferStateError(RuntimeError):
    pass


@dataclass
class RolloutBuffer:
    """Arrays shaped ``(rollout_len, n_envs, ...)``.

    ``next_values[t]`` is the value estimate of the state reached by step t:
    the next stored state within an episode, the final observation of a
    truncated episode, and the post-rollout observation for the last row.
    It is ignored where ``terminated`` is set.
    """

    obs: np.ndarray
    actions: np.ndarray
    log_probs: np.ndarray
    rewards: np.ndarray
    values: np.ndarray
    terminated: np.ndarray
    truncated: np.ndarray
    next_values: Optional[np.ndarray] = None
    advantages: Optional[np.ndarray] = None
    returns: Optional[np.ndarray] = None

    @classmethod
    def empty(cls, rollout_len: int, n_envs: int, obs_dim: int, action_shape=()) -> "RolloutBuffer":
        return cls(
            obs=np.zeros((rollout_len, n_envs, obs_dim)),
            actions=np.zeros((rollout_len, n_envs) + tuple(action_shape)),
            log_probs=np.zeros((rollout_len, n_envs)),
            rewards=np.zeros((rollout_len, n_envs)),
            values=np.zeros((rollout_len, n_envs)),
            terminated=np.zeros((rollout_len, n_envs), dtype=bool),
            truncated=np.zeros((rollout_len, n_envs), dtype=bool),
            next_values=np.zeros((rollout_len, n_envs)),
        )

    @property
    def size(self) -> int:
        return self.rewards.size

    def flat(self, name: str) -> np.ndarray:
        arr = getattr(self, name)
        return arr.reshape((-1,) + arr.shape[2:])


def compute_gae(buffer: RolloutBuffer, gamma: float, lam: float) -> RolloutBuffer:
    """Fill ``advantages`` and ``returns`` in place and return the buffer.

    Termination cuts the bootstrap. Truncation bootstraps from the final
    state's value, and both end the advantage recursion since the following
    row belongs to a fresh episode.
    """
    if buffer.next_values is None:
        raise BufferStateError("bootstrap values are missing; cannot compute advantages")
    if np.any(buffer.terminated & buffer.truncated):
        raise BufferStateError("a step cannot be both terminated and truncated")
    not_term = 1.0 - buffer.terminated
    not_done = 1.0 - (buffer.terminated | buffer.truncated)
    deltas = buffer.rewards + gamma * buffer.next_values * not_term - buffer.values
    adv = np.zeros_like(buffer.rewards)
    running = np.zeros(buffer.rewards.shape[1])
    for t in range(buffer.rewards.shape[0] - 1, -1, -1):
        running = deltas[t] + gamma * lam * not_done[t] * running
        adv[t] = running
    buffer.advantages = adv
    buffer.returns = adv + buffer.values
    return buffer
