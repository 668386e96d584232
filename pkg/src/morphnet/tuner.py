"""Growth-aware successive-halving racer.

Configurations are sampled at random, trained for a fixed per-rung budget,
ranked, and the top ``ceil(alive / eta)`` continue. Between rungs every
survivor's network is grown by one morphism, so later rungs train larger
networks that start from the function the smaller one had learned.
"""

from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Optional, Protocol, Sequence

import numpy as np

from .envs import EnvFactory
from .morph import MorphismOp, StructureError
from .nncore import Activation
from .rl import ConfigError, PPOConfig, Trainer, evaluate
from .seeding import derive_seed

log = logging.getLogger(__name__)

RACING_FIELDS = ("index", "rung", "budget", "env_step", "score", "depth", "alive")
TUNER_GROWTH_FIELDS = ("index", "rung", "env_step", "op", "depth_before", "depth_after", "ok")

_INT_FIELDS = {"epochs", "minibatch_size", "rollout_len", "n_envs", "total_steps"}


@dataclass(frozen=True)
class Dimension:
    kind: str  # "uniform" | "log_uniform" | "choice"
    low: float = 0.0
    high: float = 0.0
    values: tuple = ()

    def __post_init__(self):
        if self.kind in ("uniform", "log_uniform"):
            if not self.low < self.high:
                raise ConfigError(f"{self.kind} needs low < high, got ({self.low}, {self.high})")
            if self.kind == "log_uniform" and self.low <= 0:
                raise ConfigError(f"log_uniform bounds must be positive, got ({self.low}, {self.high})")
        elif self.kind == "choice":
            if not self.values:
                raise ConfigError("choice needs at least one value")
        else:
            raise ConfigError(f"unknown dimension kind {self.kind!r}")

    def draw(self, rng: np.random.Generator):
        if self.kind == "uniform":
            return float(rng.uniform(self.low, self.high))
        if self.kind == "log_uniform":
            return float(np.exp(rng.uniform(np.log(self.low), np.log(self.high))))
        return self.values[int(rng.integers(len(self.values)))]


def uniform(low, high) -> Dimension:
    return Dimension("uniform", float(low), float(high))


def log_uniform(low, high) -> Dimension:
    return Dimension("log_uniform", float(low), float(high))


def choice(*values) -> Dimension:
    return Dimension("choice", values=tuple(values))


SearchSpace = Dict[str, Dimension]


def sample_configs(space: SearchSpace, n: int, master_seed: int, base: Optional[PPOConfig] = None) -> List[PPOConfig]:
    """Draw ``n`` configurations; candidate i runs with seed ``derive_seed(master_seed, i)``."""
    if not space:
        raise ConfigError("search space is empty")
    if n < 1:
        raise ConfigError(f"need at least one configuration, got n={n}")
    base = base if base is not None else PPOConfig()
    unknown = (set(space) - set(PPOConfig.field_names())) | ({"seed"} & set(space))
    if unknown:
        raise ConfigError(f"search space names unknown or reserved PPOConfig fields: {sorted(unknown)}")
    rng = np.random.default_rng(derive_seed(master_seed, "search"))
    configs = []
    for i in range(n):
        values = {}
        for name, dim in space.items():
            v = dim.draw(rng)
            values[name] = int(round(v)) if name in _INT_FIELDS else v
        configs.append(replace(base, seed=derive_seed(master_seed, i), **values))
    return configs


@dataclass
class FidelitySchedule:
    rung_budgets: List[int]
    growth_ops: List[Optional[MorphismOp]] = field(default_factory=list)

    def __post_init__(self):
        if not self.rung_budgets or any(b <= 0 for b in self.rung_budgets):
            raise ConfigError(f"rung budgets must be positive, got {self.rung_budgets}")
        if len(self.growth_ops) != len(self.rung_budgets) - 1:
            raise ConfigError(
                f"need one growth op per rung boundary ({len(self.rung_budgets) - 1}), got {len(self.growth_ops)}"
            )

    @property
    def total(self) -> int:
        return sum(self.rung_budgets)


class CandidateTrainer(Protocol):
    """What the racer needs from a training backend; checkpoints are opaque."""

    def start(self, config: PPOConfig) -> Any: ...
    def train(self, checkpoint: Any, budget: int) -> Any: ...
    def evaluate(self, checkpoint: Any) -> float: ...
    def grow(self, checkpoint: Any, op: MorphismOp) -> Any: ...
    def depth(self, checkpoint: Any) -> int: ...
    def env_step(self, checkpoint: Any) -> int: ...


@dataclass
class Candidate:
    index: int
    config: PPOConfig
    checkpoint: Any = None
    score: Optional[float] = None
    alive: bool = True
    error: Optional[str] = None


@dataclass
class RacingState:
    candidates: List[Candidate]
    eta: int
    master_seed: int
    rung_index: int = 0
    log: List[Dict] = field(default_factory=list)
    growth_log: List[Dict] = field(default_factory=list)

    def alive(self) -> List[Candidate]:
        return [c for c in self.candidates if c.alive]


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("MORPHNET_THREADS", "1")))
    except ValueError:
        return 1


def _run_one(trainer: CandidateTrainer, cand: Candidate, budget: int, expected_step: int):
    if cand.checkpoint is not None and trainer.env_step(cand.checkpoint) != expected_step:
        raise StructureError(
            f"candidate {cand.index} checkpoint is at env step {trainer.env_step(cand.checkpoint)}, "
            f"rung starts at {expected_step}"
        )
    try:
        if cand.checkpoint is None:
            cand.checkpoint = trainer.start(cand.config)
        ckpt = trainer.train(cand.checkpoint, budget)
        score = float(trainer.evaluate(ckpt))
        if not math.isfinite(score):
            raise FloatingPointError(f"non-finite score {score}")
        return ckpt, score, None
    except Exception as e:  # any failure eliminates the candidate
        log.warning("candidate %d failed: %s", cand.index, e)
        return cand.checkpoint, -math.inf, f"{type(e).__name__}: {e}"


def run_rung(state: RacingState, rung: int, fidelity: FidelitySchedule, trainer: CandidateTrainer) -> RacingState:
    """Train every alive candidate for the rung's budget and score it."""
    budget = fidelity.rung_budgets[rung]
    start = sum(fidelity.rung_budgets[:rung])
    alive = state.alive()
    threads = _threads()
    if threads > 1 and len(alive) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(lambda c: _run_one(trainer, c, budget, start), alive))
    else:
        results = [_run_one(trainer, c, budget, start) for c in alive]
    for cand, (ckpt, score, err) in zip(alive, results):
        cand.checkpoint, cand.score, cand.error = ckpt, score, err
    state.rung_index = rung
    return state


def select_survivors(state: RacingState, eta: int) -> RacingState:
    """Keep the top ``ceil(alive / eta)``; ties go to the lower index; failures never survive."""
    alive = state.alive()
    keep = math.ceil(len(alive) / eta)
    ranked = sorted(alive, key=lambda c: (-c.score, c.index))
    survivors = {c.index for c in ranked[:keep] if c.score != -math.inf}
    for c in alive:
        c.alive = c.index in survivors
    return state


def grow_survivors(state: RacingState, op: MorphismOp, trainer: CandidateTrainer) -> RacingState:
    for c in state.alive():
        before = trainer.depth(c.checkpoint)
        record = {"index": c.index, "rung": state.rung_index, "env_step": trainer.env_step(c.checkpoint),
                  "op": op.describe(), "depth_before": before}
        try:
            c.checkpoint = trainer.grow(c.checkpoint, op)
            record.update(depth_after=trainer.depth(c.checkpoint), ok=True)
        except Exception as e:
            log.warning("growing candidate %d failed: %s", c.index, e)
            c.alive, c.score, c.error = False, -math.inf, f"{type(e).__name__}: {e}"
            record.update(depth_after=before, ok=False)
        state.growth_log.append(record)
    return state


def _log_rung(state: RacingState, rung: int, budget: int, ran: List[Candidate], trainer: CandidateTrainer):
    for c in sorted(ran, key=lambda c: c.index):
        ckpt = c.checkpoint
        state.log.append({
            "index": c.index,
            "rung": rung,
            "budget": budget,
            "env_step": trainer.env_step(ckpt) if ckpt is not None and c.error is None else None,
            "score": c.score,
            "depth": trainer.depth(ckpt) if ckpt is not None else None,
            "alive": c.alive,
        })


@dataclass
class Incumbent:
    index: int
    config: PPOConfig
    checkpoint: Any
    score: float


def race(
    space: SearchSpace,
    n: int,
    fidelity: FidelitySchedule,
    eta: int,
    master_seed: int,
    trainer: CandidateTrainer,
    base: Optional[PPOConfig] = None,
    growth: bool = True,
):
    """Successive halving with growth between rungs; returns ``(incumbent, state)``.

    The final rung's participants are ranked but not eliminated; the best
    one is the incumbent. ``growth=False`` races the same schedule with
    static networks.
    """
    if eta < 2:
        raise ConfigError(f"eta must be at least 2, got {eta}")
    if n < eta:
        raise ConfigError(f"need n >= eta, got n={n}, eta={eta}")
    base = replace(base if base is not None else PPOConfig(), total_steps=fidelity.total)
    configs = sample_configs(space, n, master_seed, base)
    state = RacingState([Candidate(i, cfg) for i, cfg in enumerate(configs)], eta, master_seed)
    last = len(fidelity.rung_budgets) - 1
    for rung, budget in enumerate(fidelity.rung_budgets):
        ran = state.alive()
        run_rung(state, rung, fidelity, trainer)
        if rung < last:
            select_survivors(state, eta)
        _log_rung(state, rung, budget, ran, trainer)
        log.info("rung %d: %d ran, %d alive", rung, len(ran), len(state.alive()))
        if rung < last and growth and fidelity.growth_ops[rung] is not None:
            grow_survivors(state, fidelity.growth_ops[rung], trainer)
    finalists = [c for c in state.alive() if c.score is not None and c.score != -math.inf]
    if not finalists:
        raise RuntimeError("every candidate failed; no incumbent")
    best = min(finalists, key=lambda c: (-c.score, c.index))
    return Incumbent(best.index, best.config, best.checkpoint, best.score), state


class PPOCandidates:
    """Racing backend that trains real PPO agents; checkpoints are ``rl.Trainer`` objects."""

    def __init__(
        self,
        env_factory: EnvFactory,
        hidden: Sequence[int] = (64,),
        activation: Activation = Activation.RELU,
        eval_episodes: int = 20,
    ):
        self.env_factory = env_factory
        self.hidden = tuple(hidden)
        self.activation = activation
        self.eval_episodes = eval_episodes

    def start(self, config: PPOConfig) -> Trainer:
        return Trainer(config, self.env_factory, hidden=self.hidden, activation=self.activation,
                       eval_interval=0, eval_episodes=0, check_growth=False)

    def train(self, trainer: Trainer, budget: int) -> Trainer:
        spi = trainer.cfg.steps_per_iteration
        if budget % spi:
            raise ConfigError(f"rung budget {budget} is not a multiple of rollout_len * n_envs = {spi}")
        target = trainer.env_step + budget
        trainer.run(until=target)
        if trainer.env_step != target:
            raise RuntimeError(f"training stopped at {trainer.env_step}, expected {target}")
        return trainer

    def evaluate(self, trainer: Trainer) -> float:
        return evaluate(trainer.net, self.env_factory, self.eval_episodes,
                        derive_seed(trainer.cfg.seed, "evaluation")).mean_return

    def grow(self, trainer: Trainer, op: MorphismOp) -> Trainer:
        trainer.grow(op)
        return trainer

    def depth(self, trainer: Trainer) -> int:
        return trainer.net.depth()

    def env_step(self, trainer: Trainer) -> int:
        return trainer.env_step
