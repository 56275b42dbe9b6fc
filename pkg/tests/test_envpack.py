import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pbrl import envpack as ep
from pbrl.ndmath import ContractError
from pbrl.seeding import seed_streams


def pendulum_state(theta, thetadot):
    internal = np.array([[theta, thetadot]], dtype=float)
    return ep.EnvBatchState(1, ep.pendulum_obs(internal), internal,
                            np.zeros(1, dtype=np.int64), np.zeros(1))


def pointmass_state(pos, vel, goal):
    internal = np.array([[*pos, *vel, *goal]], dtype=float)
    return ep.EnvBatchState(1, ep.pointmass_obs(internal), internal,
                            np.zeros(1, dtype=np.int64), np.zeros(1))


def streams(n, seed=0, agent=0):
    return [seed_streams(seed, agent, i, "reset") for i in range(n)]


# --- pendulum -----------------------------------------------------------------

def test_pendulum_upright_fixed_point():
    new, res = ep.pendulum_step(pendulum_state(0.0, 0.0), [[0.0]])
    assert res.rewards[0] == 0.0
    assert new.internal_state[0, 0] == 0.0


def test_pendulum_hanging_down():
    new, res = ep.pendulum_step(pendulum_state(math.pi, 0.0), [[0.0]])
    assert res.rewards[0] == pytest.approx(-math.pi ** 2, abs=1e-12)
    assert abs(new.internal_state[0, 0]) == pytest.approx(math.pi, abs=1e-12)


def test_pendulum_horizontal_euler_step():
    new, _ = ep.pendulum_step(pendulum_state(math.pi / 2, 0.0), [[0.0]])
    assert new.internal_state[0, 1] == pytest.approx(0.75, abs=1e-12)
    assert new.internal_state[0, 0] == pytest.approx(math.pi / 2 + 0.05 * 0.75, abs=1e-12)


def test_pendulum_obs_layout():
    s = pendulum_state(0.3, -0.7)
    np.testing.assert_allclose(s.obs, [[math.cos(0.3), math.sin(0.3), -0.7]])


def test_pendulum_torque_clipped():
    a, _ = ep.pendulum_step(pendulum_state(0.5, 0.0), [[10.0]])
    b, _ = ep.pendulum_step(pendulum_state(0.5, 0.0), [[2.0]])
    np.testing.assert_array_equal(a.internal_state, b.internal_state)


def test_pendulum_timeout_at_200():
    env = ep.VecEnv("pendulum", 2, streams(2))
    for t in range(199):
        assert not env.step(np.zeros((2, 1))).dones.any()
    res = env.step(np.zeros((2, 1)))
    assert res.dones.all()
    assert len(res.completed_episode_returns) == 2
    assert (env.state.step_counts == 0).all()


def test_nan_action_rejected():
    with pytest.raises(ContractError):
        ep.pendulum_step(pendulum_state(0.0, 0.0), [[np.nan]])


# --- pointmass ----------------------------------------------------------------

def test_pointmass_success_bonus():
    _, res = ep.pointmass_step(pointmass_state((0.2, 0.3), (0, 0), (0.2, 0.3)), [[0.0, 0.0]])
    assert res.rewards[0] == 10.0
    assert res.dones[0]


def test_pointmass_distance_reward():
    _, res = ep.pointmass_step(pointmass_state((0, 0), (0, 0), (1, 0)), [[0.0, 0.0]])
    assert res.rewards[0] == -1.0
    assert not res.dones[0]


def test_pointmass_integrator_step():
    new, _ = ep.pointmass_step(pointmass_state((0, 0), (0, 0), (1, 1)), [[1.0, 0.0]])
    np.testing.assert_allclose(new.internal_state[0, 2:4], [0.1, 0.0], atol=1e-15)
    np.testing.assert_allclose(new.internal_state[0, 0:2], [0.01, 0.0], atol=1e-15)


def test_pointmass_velocity_clip():
    new, _ = ep.pointmass_step(pointmass_state((0, 0), (0.95, -0.95), (1, 1)), [[1.0, -1.0]])
    np.testing.assert_array_equal(new.internal_state[0, 2:4], [1.0, -1.0])


# --- surrogate ----------------------------------------------------------------

def test_surrogate_examples():
    assert ep.surrogate_landscape_eval((0, 0), (0.3, 0.7)) == (1.2, 1.2)
    true, sur = ep.surrogate_landscape_eval((1, 1), (0, 0))
    assert true == pytest.approx(-0.8) and sur == 1.2
    true, sur = ep.surrogate_landscape_eval((1, 0), (1, 1))
    assert true == pytest.approx(0.2) and sur == pytest.approx(0.2)


# --- reset --------------------------------------------------------------------

def test_reset_mask_false_is_identity():
    env = ep.VecEnv("pendulum", 3, streams(3))
    before = env.state.copy()
    after = ep.reset_envs("pendulum", env.state, np.zeros(3, bool), env.reset_rngs)
    np.testing.assert_array_equal(after.internal_state, before.internal_state)
    np.testing.assert_array_equal(after.step_counts, before.step_counts)


def test_reset_mask_true_zeroes_counters():
    env = ep.VecEnv("pointmass", 3, streams(3))
    for _ in range(5):
        env.step(np.zeros((3, 2)))
    new = ep.reset_envs("pointmass", env.state, np.ones(3, bool), env.reset_rngs)
    assert (new.step_counts == 0).all()
    assert (new.episode_returns_accum == 0).all()


def test_reset_only_masked_rows_change():
    env = ep.VecEnv("pendulum", 3, streams(3))
    new = ep.reset_envs("pendulum", env.state, np.array([False, True, False]), env.reset_rngs)
    np.testing.assert_array_equal(new.internal_state[[0, 2]], env.state.internal_state[[0, 2]])
    assert not np.array_equal(new.internal_state[1], env.state.internal_state[1])


def test_reset_deterministic():
    a = ep.VecEnv("pendulum", 4, streams(4, seed=9))
    b = ep.VecEnv("pendulum", 4, streams(4, seed=9))
    np.testing.assert_array_equal(a.state.internal_state, b.state.internal_state)
    assert (np.abs(a.state.internal_state[:, 0]) <= math.pi).all()
    assert (np.abs(a.state.internal_state[:, 1]) <= 1.0).all()


def test_reset_bad_mask():
    env = ep.VecEnv("pendulum", 2, streams(2))
    with pytest.raises(ContractError):
        ep.reset_envs("pendulum", env.state, np.ones(3, bool), env.reset_rngs)


def test_unknown_env():
    with pytest.raises(ValueError):
        ep.env_spec("cartpole")


# --- invariants ---------------------------------------------------------------

@pytest.mark.parametrize("name", ["pendulum", "pointmass"])
def test_vectorization_soundness(name):
    n = 4
    act_dim = ep.env_spec(name).act_dim
    batch = ep.VecEnv(name, n, streams(n, seed=5))
    singles = [ep.VecEnv(name, 1, [seed_streams(5, 0, i, "reset")]) for i in range(n)]
    rng = np.random.default_rng(0)
    for _ in range(450):
        actions = rng.uniform(-2, 2, size=(n, act_dim))
        res = batch.step(actions)
        for i, env in enumerate(singles):
            r = env.step(actions[i:i + 1])
            assert r.rewards[0] == res.rewards[i]
            assert r.dones[0] == res.dones[i]
            np.testing.assert_array_equal(r.next_obs[0], res.next_obs[i])


@pytest.mark.parametrize("name", ["pendulum", "pointmass"])
def test_episode_return_accumulation(name):
    n = 3
    env = ep.VecEnv(name, n, streams(n, seed=2))
    act_dim = env.spec.act_dim
    rng = np.random.default_rng(1)
    running = np.zeros(n)
    completed = 0
    for _ in range(450):
        res = env.step(rng.uniform(-1, 1, size=(n, act_dim)))
        running = running + res.rewards
        for i, ret in res.completed_episode_returns:
            assert ret == running[i]
            running[i] = 0.0
            completed += 1
    assert completed >= n


@settings(max_examples=200, deadline=None)
@given(st.floats(-10, 10), st.floats(-8, 8), st.floats(-5, 5))
def test_pendulum_reward_nonpositive(theta, thetadot, u):
    _, res = ep.pendulum_step(pendulum_state(theta, thetadot), [[u]])
    assert res.rewards[0] <= 0.0


coord = st.floats(-1, 1)


@settings(max_examples=200, deadline=None)
@given(coord, coord, coord, coord, coord, coord, st.floats(-3, 3), st.floats(-3, 3))
def test_pointmass_reward_bounded(px, py, vx, vy, gx, gy, ax, ay):
    _, res = ep.pointmass_step(pointmass_state((px, py), (vx, vy), (gx, gy)), [[ax, ay]])
    assert res.rewards[0] <= 10.0
