"""Small environments with a common reset/step interface.

``GridRoom`` is an empty n x n room with a goal in the far corner and a
success flag. ``PointMass`` is a 2-D point driven by bounded forces that earns
an alive bonus, a forward-progress reward and pays a control cost; it dies
when it strays too far sideways.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np

from .nncore import normalize_seed


class EnvConfigError(ValueError):
    pass


class EnvProtocolError(RuntimeError):
    """step() called before reset() or after the episode ended."""


@dataclass(frozen=True)
class Discrete:
    n: int


@dataclass(frozen=True)
class Box:
    dim: int
    low: float
    high: float


@dataclass(frozen=True)
class EnvSpec:
    name: str
    obs_dim: int
    action_space: Any
    max_episode_steps: int

    def to_dict(self) -> dict:
        space = self.action_space
        if isinstance(space, Discrete):
            action = {"type": "discrete", "n": space.n}
        else:
            action = {"type": "box", "dim": space.dim, "low": space.low, "high": space.high}
        return {"name": self.name, "obs_dim": self.obs_dim, "action_space": action,
                "max_episode_steps": self.max_episode_steps}


@dataclass
class StepResult:
    obs: np.ndarray
    reward: float
    terminated: bool
    truncated: bool
    info: Dict[str, float] = field(default_factory=dict)


class Env:
    spec: EnvSpec

    def __init__(self, seed: int = 0):
        self.rng = np.random.default_rng(normalize_seed(seed))
        self.t = 0
        self.active = False

    def reset(self, seed: Optional[int] = None) -> np.ndarray:
        if seed is not None:
            self.rng = np.random.default_rng(normalize_seed(seed))
        self.t = 0
        self.active = True
        self._reset_state()
        return self._obs()

    def step(self, action) -> StepResult:
        if not self.active:
            raise EnvProtocolError("step() requires reset() first, or after the previous episode ended")
        reward, terminated, info = self._advance(action)
        self.t += 1
        truncated = not terminated and self.t >= self.spec.max_episode_steps
        if terminated or truncated:
            self.active = False
        return StepResult(self._obs(), reward, terminated, truncated, info)

    def get_state(self) -> dict:
        return {"rng": self.rng.bit_generator.state, "t": self.t, "active": self.active, **self._state_dict()}

    def set_state(self, state: dict) -> None:
        self.rng.bit_generator.state = state["rng"]
        self.t = state["t"]
        self.active = state["active"]
        self._load_state_dict(state)

    def sample_observations(self, rng: np.random.Generator, n: int) -> np.ndarray:
        raise NotImplementedError

    def _reset_state(self) -> None:
        raise NotImplementedError

    def _advance(self, action) -> Tuple[float, bool, Dict[str, float]]:
        raise NotImplementedError

    def _obs(self) -> np.ndarray:
        raise NotImplementedError

    def _state_dict(self) -> dict:
        raise NotImplementedError

    def _load_state_dict(self, state: dict) -> None:
        raise NotImplementedError


GRID_MOVES = ((0, -1), (0, 1), (-1, 0), (1, 0))  # up, down, left, right
STEP_PENALTY = -0.01


class GridRoom(Env):
    def __init__(self, n: int = 8, seed: int = 0):
        if n < 3:
            raise EnvConfigError(f"GridRoom side length must be >= 3, got {n}")
        super().__init__(seed)
        self.n = n
        self.goal = (n - 1, n - 1)
        self.pos = (0, 0)
        self.spec = EnvSpec(f"gridroom{n}", 4, Discrete(4), 4 * n * n)

    def _reset_state(self) -> None:
        # uniform over the n*n - 1 non-goal cells; the goal is the last flat index
        k = int(self.rng.integers(self.n * self.n - 1))
        self.pos = (k % self.n, k // self.n)

    def place(self, x: int, y: int) -> np.ndarray:
        """Put the agent at ``(x, y)`` (tests and oracles)."""
        self.pos = (x, y)
        return self._obs()

    def _advance(self, action):
        a = int(action)
        if not 0 <= a < 4:
            raise ValueError(f"GridRoom action must be in 0..3, got {action}")
        dx, dy = GRID_MOVES[a]
        x = min(max(self.pos[0] + dx, 0), self.n - 1)
        y = min(max(self.pos[1] + dy, 0), self.n - 1)
        self.pos = (x, y)
        if self.pos == self.goal:
            return 1.0, True, {"solved": 1.0}
        return STEP_PENALTY, False, {"solved": 0.0}

    def _obs(self) -> np.ndarray:
        s = float(self.n - 1)
        return np.array([self.pos[0] / s, self.pos[1] / s, self.goal[0] / s, self.goal[1] / s])

    def _state_dict(self) -> dict:
        return {"pos": list(self.pos)}

    def _load_state_dict(self, state: dict) -> None:
        self.pos = tuple(state["pos"])

    def sample_observations(self, rng, n):
        cells = rng.integers(self.n, size=(n, 2)) / float(self.n - 1)
        return np.hstack([cells, np.ones((n, 2))])


class PointMass(Env):
    spec = EnvSpec("pointmass", 4, Box(2, -1.0, 1.0), 200)
    ALIVE_BONUS = 1.0
    FORWARD_WEIGHT = 2.0
    CONTROL_WEIGHT = 0.5
    DEATH_Y = 2.0

    def __init__(self, seed: int = 0):
        super().__init__(seed)
        self.p = np.zeros(2)
        self.v = np.zeros(2)

    def _reset_state(self) -> None:
        self.p = np.array([0.0, self.rng.uniform(-0.1, 0.1)])
        self.v = np.zeros(2)

    def _advance(self, action):
        a = np.clip(np.asarray(action, dtype=np.float64).reshape(2), -1.0, 1.0)
        self.v = 0.9 * self.v + 0.1 * a
        self.p = self.p + self.v
        reward = self.ALIVE_BONUS + self.FORWARD_WEIGHT * self.v[0] - self.CONTROL_WEIGHT * float(a @ a)
        terminated = abs(self.p[1]) > self.DEATH_Y
        return float(reward), bool(terminated), {}

    def _obs(self) -> np.ndarray:
        return np.array([np.tanh(self.p[0] / 10.0), self.p[1], self.v[0], self.v[1]])

    def _state_dict(self) -> dict:
        return {"p": self.p.tolist(), "v": self.v.tolist()}

    def _load_state_dict(self, state: dict) -> None:
        self.p = np.array(state["p"], dtype=np.float64)
        self.v = np.array(state["v"], dtype=np.float64)

    def sample_observations(self, rng, n):
        return np.column_stack([
            rng.uniform(-1.0, 1.0, n),
            rng.uniform(-self.DEATH_Y, self.DEATH_Y, n),
            rng.uniform(-1.0, 1.0, n),
            rng.uniform(-1.0, 1.0, n),
        ])


def gridroom_new(n: int, seed: int = 0) -> GridRoom:
    return GridRoom(n, seed)


def pointmass_new(seed: int = 0) -> PointMass:
    return PointMass(seed)


EnvFactory = Callable[[int], Env]


def make_factory(name: str, **params) -> EnvFactory:
    """Factory ``seed -> env`` for a named environment."""
    name = name.lower()
    if name == "gridroom":
        n = int(params.pop("size", 8))
        if params:
            raise EnvConfigError(f"unknown gridroom parameters: {sorted(params)}")
        if n < 3:
            raise EnvConfigError(f"GridRoom side length must be >= 3, got {n}")
        return lambda seed: GridRoom(n, seed)
    if name == "pointmass":
        if params:
            raise EnvConfigError(f"unknown pointmass parameters: {sorted(params)}")
        return lambda seed: PointMass(seed)
    raise EnvConfigError(f"unknown environment {name!r}")


class VecEnv:
    """k independent environments stepped in index order with auto-reset.

    Finished episodes report their last observation in ``final_obs`` and are
    reset immediately; ``obs`` always holds the observation to act on next.
    """

    def __init__(self, factory: EnvFactory, seeds: List[int]):
        self.envs = [factory(s) for s in seeds]
        self.seeds = list(seeds)
        self.obs = np.stack([env.reset(seed) for env, seed in zip(self.envs, seeds)])
        self.episode_return = np.zeros(len(self.envs))
        self.episode_length = np.zeros(len(self.envs), dtype=np.int64)

    @property
    def spec(self) -> EnvSpec:
        return self.envs[0].spec

    def __len__(self) -> int:
        return len(self.envs)

    def step(self, actions):
        k = len(self.envs)
        rewards = np.zeros(k)
        terminated = np.zeros(k, dtype=bool)
        truncated = np.zeros(k, dtype=bool)
        final_obs = self.obs.copy()
        finished = []  # (env index, return, length, info)
        next_obs = np.empty_like(self.obs)
        for i, env in enumerate(self.envs):
            r = env.step(actions[i])
            rewards[i] = r.reward
            terminated[i] = r.terminated
            truncated[i] = r.truncated
            final_obs[i] = r.obs
            self.episode_return[i] += r.reward
            self.episode_length[i] += 1
            if r.terminated or r.truncated:
                finished.append((i, float(self.episode_return[i]), int(self.episode_length[i]), r.info))
                self.episode_return[i] = 0.0
                self.episode_length[i] = 0
                next_obs[i] = env.reset()
            else:
                next_obs[i] = r.obs
        self.obs = next_obs
        return rewards, terminated, truncated, final_obs, finished

    def get_state(self) -> dict:
        return {
            "envs": [env.get_state() for env in self.envs],
            "obs": self.obs.tolist(),
            "episode_return": self.episode_return.tolist(),
            "episode_length": self.episode_length.tolist(),
        }

    def set_state(self, state: dict) -> None:
        for env, s in zip(self.envs, state["envs"]):
            env.set_state(s)
        self.obs = np.array(state["obs"], dtype=np.float64)
        self.episode_return = np.array(state["episode_return"], dtype=np.float64)
        self.episode_length = np.array(state["episode_length"], dtype=np.int64)

