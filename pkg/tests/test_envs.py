import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import RANDOM_SOLVE_RATE_N8
from oracles import random_walk_solve_probability
from morphnet.envs import (
    EnvConfigError,
    EnvProtocolError,
    GridRoom,
    PointMass,
    VecEnv,
    gridroom_new,
    make_factory,
    pointmass_new,
)

UP, DOWN, LEFT, RIGHT = range(4)


def test_gridroom_observation_normalised():
    env = gridroom_new(5, seed=0)
    env.reset()
    assert np.array_equal(env.place(0, 0), [0.0, 0.0, 1.0, 1.0])
    assert env.spec.max_episode_steps == 100


def test_gridroom_wall_clamps():
    env = gridroom_new(5, seed=0)
    env.reset()
    env.place(0, 0)
    r = env.step(LEFT)
    assert env.pos == (0, 0) and r.reward == -0.01 and not r.terminated


def test_gridroom_shortest_path():
    env = gridroom_new(5, seed=0)
    env.reset()
    env.place(0, 0)
    total = 0.0
    for i, a in enumerate([RIGHT] * 4 + [DOWN] * 4, start=1):
        r = env.step(a)
        total += r.reward
        assert r.terminated == (i == 8)
    assert r.reward == 1.0 and r.info["solved"] == 1.0
    # the upper bound on return from the corner: 1 - 0.01 * (8 - 1)
    assert total == pytest.approx(1 - 0.01 * 7, abs=1e-12)


def test_gridroom_start_never_on_goal():
    env = gridroom_new(3, seed=1)
    starts = {tuple(env.reset()[:2]) for _ in range(500)}
    assert (1.0, 1.0) not in starts and len(starts) == 8


def test_gridroom_truncates_at_limit():
    env = gridroom_new(4, seed=0)
    env.reset()
    env.place(0, 0)
    for t in range(1, 65):
        r = env.step(UP)
        assert not r.terminated and r.truncated == (t == 64)
    with pytest.raises(EnvProtocolError):
        env.step(UP)


def test_step_before_reset():
    with pytest.raises(EnvProtocolError):
        GridRoom(5).step(0)


def test_bad_size():
    with pytest.raises(EnvConfigError):
        gridroom_new(2)
    with pytest.raises(EnvConfigError):
        make_factory("gridroom", size=2)
    with pytest.raises(EnvConfigError):
        make_factory("cartpole")


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**63), st.lists(st.integers(0, 3), min_size=1, max_size=60))
def test_gridroom_determinism_and_bounds(seed, actions):
    def run():
        env = gridroom_new(6, seed)
        out = [tuple(env.reset())]
        for a in actions:
            if not env.active:
                out.append(tuple(env.reset()))
            r = env.step(a)
            assert not (r.terminated and r.truncated)
            assert np.all((0 <= r.obs) & (r.obs <= 1))
            out.append((tuple(r.obs), r.reward, r.terminated, r.truncated))
        return out
    assert run() == run()


def test_random_walk_oracle_matches_frozen_constant():
    assert random_walk_solve_probability(8) == pytest.approx(RANDOM_SOLVE_RATE_N8, abs=1e-15)


def test_random_policy_monte_carlo_matches_constant():
    rng = np.random.default_rng(123)
    env = gridroom_new(8, seed=5)
    episodes, solved = 3000, 0
    for _ in range(episodes):
        env.reset()
        while env.active:
            r = env.step(int(rng.integers(4)))
        solved += r.info["solved"]
    sigma = np.sqrt(RANDOM_SOLVE_RATE_N8 * (1 - RANDOM_SOLVE_RATE_N8) / episodes)
    assert abs(solved / episodes - RANDOM_SOLVE_RATE_N8) < 4 * sigma


def test_pointmass_zero_policy_survival_floor():
    env = pointmass_new(seed=3)
    env.reset()
    total, steps = 0.0, 0
    while env.active:
        r = env.step(np.zeros(2))
        assert r.reward == 1.0
        total += r.reward
        steps += 1
    assert total == 200.0 and steps == 200 and r.truncated


def test_pointmass_first_push():
    env = pointmass_new(seed=0)
    env.reset()
    assert env.step(np.array([1.0, 0.0])).reward == pytest.approx(0.7, abs=1e-15)


def test_pointmass_clips_actions():
    a, b = pointmass_new(0), pointmass_new(0)
    a.reset(), b.reset()
    assert a.step(np.array([5.0, -3.0])).reward == b.step(np.array([1.0, -1.0])).reward


def test_pointmass_terminates_off_track():
    env = pointmass_new(seed=0)
    env.reset()
    for _ in range(200):
        r = env.step(np.array([0.0, 1.0]))
        if r.terminated:
            break
    assert r.terminated and abs(env.p[1]) > 2 and not r.truncated


def test_state_round_trip():
    for env in (GridRoom(6, 1), PointMass(1)):
        env.reset()
        action = 1 if isinstance(env, GridRoom) else np.array([0.3, 0.1])
        env.step(action)
        saved = env.get_state()
        first = [env.step(action).obs for _ in range(3)]
        env.set_state(saved)
        assert all(np.array_equal(a, env.step(action).obs) for a in first)


def test_vecenv_auto_reset_and_order():
    factory = make_factory("gridroom", size=3)
    vec = VecEnv(factory, [0, 1, 2])
    actions = np.array([RIGHT, DOWN, LEFT])
    singles = [factory(s) for s in (0, 1, 2)]
    obs = [e.reset(s) for e, s in zip(singles, (0, 1, 2))]
    assert np.array_equal(vec.obs, np.stack(obs))
    for _ in range(20):
        rewards, term, trunc, final_obs, finished = vec.step(actions)
        for i, e in enumerate(singles):
            r = e.step(actions[i])
            assert rewards[i] == r.reward and term[i] == r.terminated
            assert np.array_equal(final_obs[i], r.obs)
            if r.terminated or r.truncated:
                e.reset()
            assert np.array_equal(vec.obs[i], e._obs())
