import math
from dataclasses import dataclass

import numpy as np
import pytest
from scipy import stats

from morphnet.envs import make_factory
from morphnet.morph import Deeper, IdempotencyError, StructureError
from morphnet.rl import ConfigError, PPOConfig
from morphnet.tuner import (
    Candidate,
    FidelitySchedule,
    PPOCandidates,
    RacingState,
    choice,
    grow_survivors,
    log_uniform,
    race,
    run_rung,
    sample_configs,
    select_survivors,
    uniform,
)

SPACE = {"lr": log_uniform(1e-5, 1e-2), "clip_eps": uniform(0.1, 0.3), "minibatch_size": choice(125, 250)}


@dataclass
class StubCkpt:
    config: PPOConfig
    env_step: int = 0
    depth: int = 1


class StubTrainer:
    """Score is a known increasing function of lr; depth and steps are tracked exactly."""

    def __init__(self, crash=(), refuse_growth=()):
        self.crash = set(crash)
        self.refuse_growth = set(refuse_growth)
        self.trained = []

    def start(self, config):
        return StubCkpt(config)

    def train(self, ckpt, budget):
        if ckpt.config.seed in self.crash:
            raise FloatingPointError("diverged")
        self.trained.append((ckpt.config.seed, budget))
        ckpt.env_step += budget
        return ckpt

    def evaluate(self, ckpt):
        return math.log(ckpt.config.lr)

    def grow(self, ckpt, op):
        if ckpt.config.seed in self.refuse_growth:
            raise IdempotencyError("refused")
        ckpt.depth += 1
        return ckpt

    def depth(self, ckpt):
        return ckpt.depth

    def env_step(self, ckpt):
        return ckpt.env_step


def fidelity(rungs, budget=1000):
    return FidelitySchedule([budget] * rungs, [Deeper()] * (rungs - 1))


def scored_state(scores):
    cands = [Candidate(i, PPOConfig(), score=s) for i, s in enumerate(scores)]
    return RacingState(cands, eta=2, master_seed=0)


def test_sample_configs_reproducible_and_in_bounds():
    a = sample_configs(SPACE, 50, master_seed=7)
    assert a == sample_configs(SPACE, 50, master_seed=7)
    assert a != sample_configs(SPACE, 50, master_seed=8)
    assert all(1e-5 <= c.lr <= 1e-2 and c.minibatch_size in (125, 250) for c in a)
    assert len({c.seed for c in a}) == 50


def test_log_uniform_is_uniform_in_log_space():
    lrs = [c.lr for c in sample_configs({"lr": log_uniform(1e-5, 1e-2)}, 10000, master_seed=3)]
    u = (np.log(lrs) - np.log(1e-5)) / (np.log(1e-2) - np.log(1e-5))
    assert stats.kstest(u, "uniform").statistic < 0.02


def test_space_validation():
    with pytest.raises(ConfigError):
        sample_configs({}, 4, 0)
    with pytest.raises(ConfigError):
        log_uniform(0, 1)
    with pytest.raises(ConfigError):
        uniform(2, 1)
    with pytest.raises(ConfigError):
        sample_configs({"learning_rate": uniform(0, 1)}, 4, 0)
    with pytest.raises(ConfigError):
        FidelitySchedule([1000, 1000], [])


def test_select_top_half():
    state = select_survivors(scored_state([5, 1, 7, 3, 8, 2, 6, 4]), 2)
    assert [c.index for c in state.alive()] == [0, 2, 4, 6]


def test_ties_go_to_lower_index():
    state = select_survivors(scored_state([1.0] * 8), 2)
    assert [c.index for c in state.alive()] == [0, 1, 2, 3]


def test_eta_three():
    state = select_survivors(scored_state([3, 1, 2]), 3)
    assert [c.index for c in state.alive()] == [0]


def test_crashed_candidate_never_survives():
    state = select_survivors(scored_state([-math.inf, -math.inf, 1.0]), 2)
    assert [c.index for c in state.alive()] == [2]


def test_run_rung_budget_accounting():
    trainer = StubTrainer()
    fid = fidelity(2)
    state = RacingState([Candidate(i, c) for i, c in enumerate(sample_configs(SPACE, 2, 0))], 2, 0)
    run_rung(state, 0, fid, trainer)
    run_rung(state, 1, fid, trainer)
    assert [c.checkpoint.env_step for c in state.candidates] == [2000, 2000]


def test_checkpoint_mismatch_is_structural():
    trainer = StubTrainer()
    fid = fidelity(2)
    state = RacingState([Candidate(0, PPOConfig(), checkpoint=StubCkpt(PPOConfig(), env_step=500))], 2, 0)
    with pytest.raises(StructureError):
        run_rung(state, 1, fid, trainer)


def test_grow_survivors_leaves_dead_untouched():
    trainer = StubTrainer()
    state = scored_state([1, 2, 3, 4])
    for c in state.candidates:
        c.checkpoint = StubCkpt(c.config)
    select_survivors(state, 2)
    grow_survivors(state, Deeper(), trainer)
    assert [c.checkpoint.depth for c in state.candidates] == [1, 1, 2, 2]
    assert len(state.growth_log) == 2


def check_race(state, n, rungs):
    alive_per_rung = [sum(1 for r in state.log if r["rung"] == k) for k in range(rungs)]
    expected = [n]
    for _ in range(rungs - 1):
        expected.append(math.ceil(expected[-1] / 2))
    assert alive_per_rung == expected
    # every survivor of rung i has depth 1 + i and grew exactly once per boundary
    for r in state.log:
        assert r["depth"] == 1 + r["rung"]
    for k in range(rungs - 1):
        grown = sorted(g["index"] for g in state.growth_log if g["rung"] == k)
        assert grown == sorted(r["index"] for r in state.log if r["rung"] == k + 1)
    # a dead candidate never reappears
    last_rung = {}
    for r in state.log:
        assert last_rung.get(r["index"], r["rung"] - 1) == r["rung"] - 1
        last_rung[r["index"]] = r["rung"]
    return alive_per_rung


@pytest.mark.parametrize("n,rungs", [(8, 4), (16, 5)])
def test_race_finds_best_lr(n, rungs):
    trainer = StubTrainer()
    incumbent, state = race(SPACE, n, fidelity(rungs), 2, master_seed=11, trainer=trainer)
    configs = sample_configs(SPACE, n, 11, PPOConfig(total_steps=1000 * rungs))
    # oracle: enumerate every candidate at full budget
    assert incumbent.index == int(np.argmax([c.lr for c in configs]))
    assert incumbent.config == configs[incumbent.index]
    assert check_race(state, n, rungs)[-1] == 1
    assert incumbent.checkpoint.depth == rungs
    total = sum(b for _, b in trainer.trained)
    assert total == sum(r["budget"] for r in state.log)


def test_race_reproducible_and_thread_independent(monkeypatch):
    a = race(SPACE, 16, fidelity(5), 2, 4, StubTrainer())[1].log
    monkeypatch.setenv("MORPHNET_THREADS", "4")
    b = race(SPACE, 16, fidelity(5), 2, 4, StubTrainer())[1].log
    assert a == b


def test_race_with_crashes():
    configs = sample_configs(SPACE, 8, 0, PPOConfig(total_steps=3000))
    best = int(np.argmax([c.lr for c in configs]))
    incumbent, state = race(SPACE, 8, fidelity(3), 2, 0, StubTrainer(crash={configs[best].seed}))
    assert incumbent.index != best
    rec = [r for r in state.log if r["index"] == best]
    assert len(rec) == 1 and rec[0]["score"] == -math.inf and not rec[0]["alive"]


def test_failed_growth_eliminates_candidate():
    configs = sample_configs(SPACE, 4, 0, PPOConfig(total_steps=2000))
    best = int(np.argmax([c.lr for c in configs]))
    incumbent, state = race(SPACE, 4, fidelity(2), 2, 0, StubTrainer(refuse_growth={configs[best].seed}))
    assert incumbent.index != best
    assert [g["ok"] for g in state.growth_log if g["index"] == best] == [False]


def test_race_without_growth():
    incumbent, state = race(SPACE, 4, fidelity(3), 2, 0, StubTrainer(), growth=False)
    assert not state.growth_log and incumbent.checkpoint.depth == 1


def test_race_argument_checks():
    with pytest.raises(ConfigError):
        race(SPACE, 1, fidelity(2), 2, 0, StubTrainer())
    with pytest.raises(ConfigError):
        race(SPACE, 4, fidelity(2), 1, 0, StubTrainer())


def test_ppo_backend_small_race():
    base = PPOConfig(rollout_len=32, n_envs=4, minibatch_size=64, epochs=1, total_steps=512)
    backend = PPOCandidates(make_factory("gridroom", size=4), hidden=(8,), eval_episodes=5)
    fid = FidelitySchedule([256, 256], [Deeper()])
    incumbent, state = race({"lr": log_uniform(1e-4, 1e-2)}, 4, fid, 2, 0, backend, base=base)
    assert incumbent.checkpoint.env_step == 512 and incumbent.checkpoint.net.depth() == 2
    assert [r["env_step"] for r in state.log if r["rung"] == 1] == [512, 512]


def test_ppo_backend_growth_keeps_score():
    cfg = PPOConfig(rollout_len=32, n_envs=4, minibatch_size=64, epochs=1, total_steps=512)
    backend = PPOCandidates(make_factory("gridroom", size=4), hidden=(8,), eval_episodes=5)
    ckpt = backend.train(backend.start(cfg), 256)
    before = backend.evaluate(ckpt)
    ckpt = backend.grow(ckpt, Deeper())
    assert backend.depth(ckpt) == 2 and backend.evaluate(ckpt) == before
    with pytest.raises(ConfigError):
        backend.train(ckpt, 100)
