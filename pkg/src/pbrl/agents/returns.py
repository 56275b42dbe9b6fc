"""Advantage and target computations shared by the learners."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import kernels
from ..ndmath import ContractError

LR_BOUNDS = (1e-6, 1e-2)


@dataclass
class TrajectoryBatch:
    """On-policy rollout with leading dims (T, N).

    ``values`` holds V(s_t) for t < T; the bootstrap V(s_T) is kept apart.
    """

    obs: np.ndarray
    actions: np.ndarray
    log_probs: np.ndarray
    rewards: np.ndarray
    values: np.ndarray
    dones: np.ndarray

    def __post_init__(self):
        lead = self.rewards.shape
        for name in ("obs", "actions", "log_probs", "values", "dones"):
            if getattr(self, name).shape[:2] != lead:
                raise ContractError(f"{name} leading dims {getattr(self, name).shape[:2]} "
                                    f"!= rewards {lead}")

    @property
    def horizon(self):
        return self.rewards.shape[0]

    @property
    def num_envs(self):
        return self.rewards.shape[1]


def gae_advantages(traj, gamma, lam, bootstrap_values, reward_scale=1.0):
    """Generalized advantage estimates and value targets, both (T, N)."""
    values = np.concatenate([traj.values, np.asarray(bootstrap_values)[None, :]], axis=0)
    rewards = np.ascontiguousarray(traj.rewards * reward_scale, dtype=np.float64)
    dones = np.ascontiguousarray(traj.dones, dtype=np.float64)
    adv = kernels.gae(rewards, np.ascontiguousarray(values, dtype=np.float64), dones,
                      gamma, lam)
    return adv, adv + traj.values


def nstep_targets(rewards, dones, bootstrap_q, gamma):
    """n-step bootstrapped returns for a sampled batch.

    rewards/dones are (B, n) sequences starting at s_t; ``bootstrap_q`` is the
    (already min-reduced) target value at s_{t+n}. The sum stops at the first
    done and then no bootstrap is added.
    """
    rewards = np.ascontiguousarray(rewards, dtype=np.float64)
    dones = np.ascontiguousarray(dones, dtype=np.float64)
    if rewards.ndim != 2 or rewards.shape != dones.shape:
        raise ContractError(f"rewards {rewards.shape} and dones {dones.shape} must match (B, n)")
    boot = np.ascontiguousarray(bootstrap_q, dtype=np.float64).reshape(-1)
    return kernels.nstep_returns(rewards, dones, boot, gamma)


def kl_adapt_lr(current_lr, observed_kl, kl_threshold, gain, lr_bounds=LR_BOUNDS):
    """Divide by ``gain`` above the threshold, multiply below half of it."""
    if observed_kl > kl_threshold:
        lr = current_lr / gain
    elif observed_kl < kl_threshold / 2.0:
        lr = current_lr * gain
    else:
        lr = current_lr
    return min(max(lr, lr_bounds[0]), lr_bounds[1])


def mixed_exploration_stds(n, sigma_min, sigma_max):
    """Per-env noise levels spaced linearly from sigma_min to sigma_max."""
    if n < 1:
        raise ContractError("need at least one environment")
    if sigma_min > sigma_max:
        raise ContractError(f"sigma_min {sigma_min} > sigma_max {sigma_max}")
    if n == 1:
        return np.array([float(sigma_min)])
    i = np.arange(n, dtype=np.float64)
    out = sigma_min + (i / (n - 1)) * (sigma_max - sigma_min)
    out[-1] = sigma_max
    return out
