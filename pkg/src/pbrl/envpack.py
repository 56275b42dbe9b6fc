"""Vectorized desk-scale environments.

Two control tasks (``pendulum``, ``pointmass``) share one batch-state layout
and a pure step function each; ``VecEnv`` adds auto-reset on done. The
``surrogate`` landscape is not an MDP: it is a closed-form objective used to
exercise the evolution loop by itself (see ``agents.surrogate``).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .ndmath import ContractError

ENV_NAMES = ("pendulum", "pointmass", "surrogate")


@dataclass
class EnvBatchState:
    num_envs: int
    obs: np.ndarray
    internal_state: np.ndarray
    step_counts: np.ndarray
    episode_returns_accum: np.ndarray

    def copy(self):
        return EnvBatchState(self.num_envs, self.obs.copy(), self.internal_state.copy(),
                             self.step_counts.copy(), self.episode_returns_accum.copy())


@dataclass
class StepResult:
    next_obs: np.ndarray
    rewards: np.ndarray
    dones: np.ndarray
    completed_episode_returns: list = field(default_factory=list)


@dataclass(frozen=True)
class EnvSpec:
    name: str
    obs_dim: int
    act_dim: int
    action_low: float
    action_high: float
    max_episode_length: int
    reward_bound: float


PENDULUM = EnvSpec("pendulum", 3, 1, -2.0, 2.0, 200, 0.0)
POINTMASS = EnvSpec("pointmass", 6, 2, -1.0, 1.0, 100, 10.0)

# pendulum constants
GRAVITY = 10.0
MASS = 1.0
LENGTH = 1.0
PENDULUM_DT = 0.05
MAX_SPEED = 8.0

# pointmass constants
POINTMASS_DT = 0.1
GOAL_RADIUS = 0.05
SUCCESS_BONUS = 10.0


def _check_actions(actions, num_envs, act_dim):
    actions = np.asarray(actions, dtype=np.float64).reshape(num_envs, act_dim)
    if np.isnan(actions).any():
        raise ContractError("NaN in actions")
    return actions


def _finish(state, internal, obs, rewards, terminal, spec):
    steps = state.step_counts + 1
    accum = state.episode_returns_accum + rewards
    dones = terminal | (steps >= spec.max_episode_length)
    completed = [(int(i), float(accum[i])) for i in np.flatnonzero(dones)]
    new_state = EnvBatchState(state.num_envs, obs, internal, steps, accum)
    return new_state, StepResult(obs.copy(), rewards, dones, completed)


# --- pendulum -----------------------------------------------------------------

def pendulum_obs(internal):
    theta, thetadot = internal[:, 0], internal[:, 1]
    return np.stack([np.cos(theta), np.sin(theta), thetadot], axis=1)


def pendulum_step(state, actions):
    """Advance every pendulum by one step. Returns (new_state, StepResult).

    Angle 0 is upright. Torque is clipped to [-2, 2] before integration.
    """
    u = _check_actions(actions, state.num_envs, 1)[:, 0]
    u = np.clip(u, PENDULUM.action_low, PENDULUM.action_high)
    theta = np.ascontiguousarray(state.internal_state[:, 0])
    thetadot = np.ascontiguousarray(state.internal_state[:, 1])
    new_theta, new_thetadot, rewards = kernels.pendulum_dynamics(
        theta, thetadot, np.ascontiguousarray(u),
        GRAVITY, MASS, LENGTH, PENDULUM_DT, MAX_SPEED)
    internal = np.stack([new_theta, new_thetadot], axis=1)
    terminal = np.zeros(state.num_envs, dtype=bool)
    return _finish(state, internal, pendulum_obs(internal), rewards, terminal, PENDULUM)


def _pendulum_initial(rng):
    return np.array([rng.uniform(-math.pi, math.pi), rng.uniform(-1.0, 1.0)])


# --- pointmass ----------------------------------------------------------------
# internal layout: px, py, vx, vy, gx, gy

def pointmass_obs(internal):
    pos, vel, goal = internal[:, 0:2], internal[:, 2:4], internal[:, 4:6]
    return np.concatenate([pos, vel, goal - pos], axis=1)


def pointmass_step(state, actions):
    """Planar double integrator; reaching within 0.05 of the goal ends the episode."""
    a = _check_actions(actions, state.num_envs, 2)
    a = np.clip(a, POINTMASS.action_low, POINTMASS.action_high)
    internal = state.internal_state.copy()
    vel = np.clip(internal[:, 2:4] + a * POINTMASS_DT, -1.0, 1.0)
    pos = internal[:, 0:2] + vel * POINTMASS_DT
    internal[:, 0:2] = pos
    internal[:, 2:4] = vel
    dist = np.sqrt(np.sum((pos - internal[:, 4:6]) ** 2, axis=1))
    success = dist < GOAL_RADIUS
    rewards = -dist - 0.01 * np.sum(a * a, axis=1) + np.where(success, SUCCESS_BONUS, 0.0)
    return _finish(state, internal, pointmass_obs(internal), rewards, success, POINTMASS)


def _pointmass_initial(rng):
    pos = rng.uniform(-1.0, 1.0, size=2)
    goal = rng.uniform(-1.0, 1.0, size=2)
    return np.concatenate([pos, np.zeros(2), goal])


# --- surrogate landscape ------------------------------------------------------

def surrogate_landscape_eval(theta, h):
    """Return (true objective, surrogate objective) for a 2-vector theta."""
    t1, t2 = float(theta[0]), float(theta[1])
    true = 1.2 - t1 * t1 - t2 * t2
    surrogate = 1.2 - float(h[0]) * t1 * t1 - float(h[1]) * t2 * t2
    return true, surrogate


# --- batch management ---------------------------------------------------------

_DYNAMICS = {
    "pendulum": (PENDULUM, pendulum_step, _pendulum_initial, pendulum_obs),
    "pointmass": (POINTMASS, pointmass_step, _pointmass_initial, pointmass_obs),
}


def env_spec(name):
    try:
        return _DYNAMICS[name][0]
    except KeyError:
        raise ValueError(f"unknown control env {name!r}; choose from "
                         f"{sorted(_DYNAMICS)}") from None


def empty_state(name, num_envs):
    spec, _, initial, obs_fn = _DYNAMICS[name]
    dim = 2 if name == "pendulum" else 6
    internal = np.zeros((num_envs, dim))
    return EnvBatchState(num_envs, obs_fn(internal), internal,
                         np.zeros(num_envs, dtype=np.int64), np.zeros(num_envs))


def reset_envs(name, state, mask, rngs):
    """Redraw the initial state for every env where ``mask`` is true.

    ``rngs`` holds one generator per env; only masked envs consume draws.
    """
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (state.num_envs,):
        raise ContractError(f"mask has shape {mask.shape}, expected ({state.num_envs},)")
    if not mask.any():
        return state
    _, _, initial, obs_fn = _DYNAMICS[name]
    new = state.copy()
    for i in np.flatnonzero(mask):
        new.internal_state[i] = initial(rngs[i])
    new.step_counts[mask] = 0
    new.episode_returns_accum[mask] = 0.0
    new.obs = obs_fn(new.internal_state)
    return new


class VecEnv:
    """N copies of one control task with auto-reset.

    ``reset_rngs`` are per-env generators so the batch behaves exactly like N
    independent single-env copies driven by the same streams.
    """

    def __init__(self, name, num_envs, reset_rngs):
        self.name = name
        self.spec = env_spec(name)
        self.num_envs = num_envs
        self.reset_rngs = list(reset_rngs)
        if len(self.reset_rngs) != num_envs:
            raise ContractError("need one reset stream per env")
        self._step = _DYNAMICS[name][1]
        self.state = reset_envs(name, empty_state(name, num_envs),
                                np.ones(num_envs, dtype=bool), self.reset_rngs)

    @property
    def obs(self):
        return self.state.obs

    def step(self, actions):
        self.state, result = self._step(self.state, actions)
        if result.dones.any():
            self.state = reset_envs(self.name, self.state, result.dones, self.reset_rngs)
            result.next_obs = self.state.obs.copy()
        return result

    def reset_all(self):
        self.state = reset_envs(self.name, self.state,
                                np.ones(self.num_envs, dtype=bool), self.reset_rngs)
        return self.state.obs
