"""PPO training loop with scheduled network growth at rollout boundaries."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from .. import distributions as dist
from ..envs import Box, Discrete, EnvFactory, VecEnv
from ..morph import (
    GrowthSchedule,
    MorphismOp,
    apply_op,
    due_growth,
    expand_optimizer_state,
    max_deviation,
)
from ..nncore import Activation, AdamState, Network, PolicyKind, forward, init_network
from ..seeding import derive_seed
from .buffer import RolloutBuffer, compute_gae
from .ppo import PPOConfig, ppo_update

log = logging.getLogger(__name__)

METRIC_FIELDS = (
    "iteration",
    "env_step",
    "depth",
    "param_count",
    "episodes",
    "mean_episode_return",
    "solve_rate",
    "policy_loss",
    "value_loss",
    "entropy",
    "approx_kl",
    "clip_fraction",
    "eval_return",
    "eval_solve_rate",
)

GROWTH_FIELDS = (
    "env_step",
    "iteration",
    "op",
    "depth_before",
    "depth_after",
    "params_before",
    "params_after",
    "max_deviation",
    "max_kl",
    "greedy_identical",
    "eval_return_before",
    "eval_return_after",
)

GROWTH_CHECK_SAMPLES = 1000


@dataclass
class EvalResult:
    mean_return: float
    solve_rate: Optional[float]
    returns: np.ndarray


def evaluate(net: Network, env_factory: EnvFactory, episodes: int, seed: int) -> EvalResult:
    """Greedy (argmax or mean action) evaluation, all episodes stepped in lockstep.

    Exact argmax ties are broken at random from a stream derived from ``seed``.
    """
    ties = np.random.default_rng(derive_seed(seed, "ties"))
    envs = [env_factory(derive_seed(seed, "eval", i)) for i in range(episodes)]
    obs = np.stack([env.reset() for env in envs])
    returns = np.zeros(episodes)
    solved = np.zeros(episodes)
    has_solved = False
    active = np.ones(episodes, dtype=bool)
    while active.any():
        idx = np.flatnonzero(active)
        pp, _ = forward(net, obs[idx])
        actions = dist.greedy(net.policy_kind, pp, ties)
        for j, i in enumerate(idx):
            r = envs[i].step(actions[j])
            returns[i] += r.reward
            obs[i] = r.obs
            if "solved" in r.info:
                has_solved = True
                solved[i] = r.info["solved"]
            if r.terminated or r.truncated:
                active[i] = False
    return EvalResult(float(returns.mean()), float(solved.mean()) if has_solved else None, returns)


@dataclass
class TrainMetrics:
    records: List[Dict] = field(default_factory=list)
    growth_events: List[Dict] = field(default_factory=list)

    def column(self, name: str) -> List:
        return [r[name] for r in self.records]


class Trainer:
    """Owns one training run: network, optimizer, environments and RNG streams.

    All randomness used for training flows through ``self.rng`` and the
    environments' own generators. Evaluation and growth checks draw from
    generators derived from ``(seed, env_step)`` so they never perturb
    the training stream.
    """

    def __init__(
        self,
        cfg: PPOConfig,
        env_factory: EnvFactory,
        hidden: Sequence[int] = (64,),
        activation: Activation = Activation.RELU,
        schedule: Optional[GrowthSchedule] = None,
        eval_interval: int = 0,
        eval_episodes: int = 100,
        sink: Optional[Callable[[Dict], None]] = None,
        growth_sink: Optional[Callable[[Dict], None]] = None,
        check_growth: bool = True,
    ):
        self.cfg = cfg
        self.env_factory = env_factory
        self.schedule = schedule if schedule is not None else GrowthSchedule()
        if self.schedule.events and self.schedule.events[-1][0] > cfg.total_steps:
            raise ValueError(
                f"growth trigger {self.schedule.events[-1][0]} lies beyond total_steps {cfg.total_steps}"
            )
        self.eval_interval = int(eval_interval)
        self.eval_episodes = int(eval_episodes)
        self.sink = sink
        self.growth_sink = growth_sink
        self.check_growth = check_growth

        self.envs = VecEnv(env_factory, [derive_seed(cfg.seed, "env", i) for i in range(cfg.n_envs)])
        spec = self.envs.spec
        if isinstance(spec.action_space, Discrete):
            kind, n_out = PolicyKind.CATEGORICAL, spec.action_space.n
        elif isinstance(spec.action_space, Box):
            kind, n_out = PolicyKind.GAUSSIAN, spec.action_space.dim
        else:
            raise TypeError(f"unsupported action space {spec.action_space!r}")
        self.net = init_network([spec.obs_dim, *hidden], n_out, kind, derive_seed(cfg.seed, "net"), activation)
        self.adam = AdamState.zeros_like(self.net.params())
        self.rng = np.random.default_rng(derive_seed(cfg.seed, "train"))
        self.env_step = 0
        self.iteration = 0
        self.next_eval = self.eval_interval if self.eval_interval > 0 else None
        self.metrics = TrainMetrics()

    @property
    def done(self) -> bool:
        return self.env_step >= self.cfg.total_steps

    def collect_rollout(self) -> (RolloutBuffer, list):
        cfg, net = self.cfg, self.net
        action_shape = () if net.policy_kind is PolicyKind.CATEGORICAL else (net.action_dim,)
        buf = RolloutBuffer.empty(cfg.rollout_len, cfg.n_envs, net.obs_dim, action_shape)
        finished = []
        for t in range(cfg.rollout_len):
            obs = self.envs.obs
            pp, values = forward(net, obs)
            actions = dist.sample(net.policy_kind, pp, net.log_std, self.rng)
            buf.obs[t] = obs
            buf.actions[t] = actions
            buf.log_probs[t] = dist.log_prob(net.policy_kind, pp, net.log_std, actions)
            buf.values[t] = values
            rewards, term, trunc, final_obs, done_here = self.envs.step(actions)
            buf.rewards[t] = rewards
            buf.terminated[t] = term
            buf.truncated[t] = trunc
            if trunc.any():
                _, v_final = forward(net, final_obs[trunc])
                buf.next_values[t, trunc] = v_final
            if t > 0:
                carry = ~(buf.terminated[t - 1] | buf.truncated[t - 1])
                buf.next_values[t - 1, carry] = values[carry]
            finished.extend(done_here)
        _, v_last = forward(net, self.envs.obs)
        last = cfg.rollout_len - 1
        carry = ~(buf.terminated[last] | buf.truncated[last])
        buf.next_values[last, carry] = v_last[carry]
        return buf, finished

    def evaluate(self) -> EvalResult:
        return evaluate(self.net, self.env_factory, self.eval_episodes, derive_seed(self.cfg.seed, "evaluation"))

    def step(self) -> Dict:
        """Run one iteration: rollout, advantages, update, metrics, then any due growth."""
        cfg = self.cfg
        buf, finished = self.collect_rollout()
        compute_gae(buf, cfg.gamma, cfg.lam)
        stats = ppo_update(self.net, self.adam, buf, cfg, self.rng)
        self.env_step += cfg.steps_per_iteration
        self.iteration += 1

        returns = [f[1] for f in finished]
        solved = [f[3]["solved"] for f in finished if "solved" in f[3]]
        record = {
            "iteration": self.iteration,
            "env_step": self.env_step,
            "depth": self.net.depth(),
            "param_count": self.net.param_count(),
            "episodes": len(finished),
            "mean_episode_return": float(np.mean(returns)) if returns else None,
            "solve_rate": float(np.mean(solved)) if solved else None,
            "eval_return": None,
            "eval_solve_rate": None,
            **{k: stats[k] for k in ("policy_loss", "value_loss", "entropy", "approx_kl", "clip_fraction")},
        }
        if self._eval_due():
            ev = self.evaluate()
            record["eval_return"] = ev.mean_return
            record["eval_solve_rate"] = ev.solve_rate
        self.metrics.records.append(record)
        if self.sink is not None:
            self.sink(record)

        op = due_growth(self.schedule, self.env_step)
        if op is not None:
            self.grow(op)
        return record

    def _eval_due(self) -> bool:
        if self.eval_episodes <= 0:
            return False
        due = self.done
        if self.next_eval is not None and self.env_step >= self.next_eval:
            due = True
            while self.next_eval <= self.env_step:
                self.next_eval += self.eval_interval
        return due

    def grow(self, op: MorphismOp) -> Dict:
        """Apply a morphism now, carry optimizer state over and log the event."""
        old = self.net
        try:
            new = apply_op(old, op, np.random.default_rng(derive_seed(self.cfg.seed, "noise", self.env_step)))
            adam = expand_optimizer_state(self.adam, old, new, op)
        except Exception as e:
            raise type(e)(f"growth {op} at env step {self.env_step} failed: {e}") from e
        event = {
            "env_step": self.env_step,
            "iteration": self.iteration,
            "op": op.describe(),
            "depth_before": old.depth(),
            "depth_after": new.depth(),
            "params_before": old.param_count(),
            "params_after": new.param_count(),
            "max_deviation": None,
            "max_kl": None,
            "greedy_identical": None,
            "eval_return_before": None,
            "eval_return_after": None,
        }
        if self.check_growth:
            check_rng = np.random.default_rng(derive_seed(self.cfg.seed, "growth-check", self.env_step))
            obs = self.envs.envs[0].sample_observations(check_rng, GROWTH_CHECK_SAMPLES)
            pp_old, _ = forward(old, obs)
            pp_new, _ = forward(new, obs)
            event["max_deviation"] = max_deviation(old, new, obs)
            event["max_kl"] = float(np.max(np.abs(dist.kl(old.policy_kind, pp_old, old.log_std, pp_new, new.log_std))))
            event["greedy_identical"] = bool(
                np.array_equal(dist.greedy(old.policy_kind, pp_old), dist.greedy(new.policy_kind, pp_new))
            )
            if self.eval_episodes > 0:
                seed = derive_seed(self.cfg.seed, "evaluation")
                event["eval_return_before"] = evaluate(old, self.env_factory, self.eval_episodes, seed).mean_return
                event["eval_return_after"] = evaluate(new, self.env_factory, self.eval_episodes, seed).mean_return
        self.net, self.adam = new, adam
        log.info("grew network at env step %d: %s, depth %d -> %d",
                 self.env_step, op.describe(), event["depth_before"], event["depth_after"])
        self.metrics.growth_events.append(event)
        if self.growth_sink is not None:
            self.growth_sink(event)
        return event

    def run(self, until: Optional[int] = None) -> TrainMetrics:
        """Train until ``until`` env steps (default ``cfg.total_steps``)."""
        stop = self.cfg.total_steps if until is None else min(until, self.cfg.total_steps)
        while self.env_step < stop:
            self.step()
        return self.metrics

    def state_dict(self) -> Dict:
        return {
            "net": self.net,
            "adam": self.adam,
            "rng": self.rng.bit_generator.state,
            "envs": self.envs.get_state(),
            "env_step": self.env_step,
            "iteration": self.iteration,
            "next_eval": self.next_eval,
            "schedule_index": self.schedule.next_index,
            "growth_events": list(self.metrics.growth_events),
        }

    def load_state_dict(self, state: Dict) -> None:
        state["adam"].check_congruent(state["net"].params())
        self.net = state["net"]
        self.adam = state["adam"]
        self.rng.bit_generator.state = state["rng"]
        self.envs.set_state(state["envs"])
        self.env_step = state["env_step"]
        self.iteration = state["iteration"]
        self.next_eval = state["next_eval"]
        self.schedule.next_index = state["schedule_index"]
        self.metrics = TrainMetrics(growth_events=list(state["growth_events"]))


def train(
    cfg: PPOConfig,
    env_factory: EnvFactory,
    schedule: Optional[GrowthSchedule] = None,
    sink: Optional[Callable[[Dict], None]] = None,
    **kwargs,
):
    """Train from scratch to ``cfg.total_steps``; returns ``(network, metrics)``."""
    trainer = Trainer(cfg, env_factory, schedule=schedule, sink=sink, **kwargs)
    metrics = trainer.run()
    return trainer.net, metrics
