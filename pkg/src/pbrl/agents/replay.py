"""Ring-buffer replay of n-step segments, one store per agent."""
from __future__ import annotations

from collections import deque

import numpy as np

from ..ndmath import ContractError


class ReplayStore:
    """Fixed-capacity ring buffer of n-step transition segments.

    Each slot holds ``(s_t, a_t, r_t..r_{t+n-1}, done_t..done_{t+n-1}, s_{t+n})``.
    Segments that hit a done are cut there: later reward/done entries are
    zero-padded and the done flag at the cut suppresses bootstrapping.
    Transitions are pushed per vectorized step through ``add_step``, which
    keeps one pending window per env.
    """

    def __init__(self, capacity, obs_dim, act_dim, n_step, num_envs):
        if capacity <= 0 or n_step <= 0:
            raise ContractError("capacity and n_step must be positive")
        self.capacity = int(capacity)
        self.n_step = int(n_step)
        self.num_envs = int(num_envs)
        self.obs_dim = obs_dim
        self.act_dim = act_dim
        self.obs = np.zeros((self.capacity, obs_dim))
        self.actions = np.zeros((self.capacity, act_dim))
        self.rewards = np.zeros((self.capacity, self.n_step))
        self.dones = np.zeros((self.capacity, self.n_step))
        self.next_obs = np.zeros((self.capacity, obs_dim))
        self.cursor = 0
        self.fill = 0
        self._pending = [deque() for _ in range(self.num_envs)]

    def __len__(self):
        return self.fill

    def _write(self, obs, action, rewards, dones, next_obs):
        i = self.cursor
        self.obs[i] = obs
        self.actions[i] = action
        self.rewards[i] = 0.0
        self.dones[i] = 0.0
        self.rewards[i, :len(rewards)] = rewards
        self.dones[i, :len(dones)] = dones
        self.next_obs[i] = next_obs
        self.cursor = (self.cursor + 1) % self.capacity
        self.fill = min(self.fill + 1, self.capacity)

    def add_step(self, obs, actions, rewards, dones, next_obs):
        """Record one vectorized step; emits finished segments into the ring."""
        for e in range(self.num_envs):
            window = self._pending[e]
            window.append((obs[e].copy(), actions[e].copy(), float(rewards[e]), bool(dones[e])))
            if dones[e]:
                while window:
                    self._emit(window, next_obs[e])
                    window.popleft()
            elif len(window) == self.n_step:
                self._emit(window, next_obs[e])
                window.popleft()

    def _emit(self, window, next_obs):
        s, a = window[0][0], window[0][1]
        rs = [w[2] for w in window]
        ds = [1.0 if w[3] else 0.0 for w in window]
        self._write(s, a, rs, ds, next_obs)

    def sample(self, batch_size, rng, warmup=0):
        if self.fill < max(warmup, 1):
            raise ContractError(f"replay holds {self.fill} transitions; "
                                f"need {max(warmup, 1)} before sampling")
        idx = rng.integers(0, self.fill, size=batch_size)
        return {
            "obs": self.obs[idx],
            "actions": self.actions[idx],
            "rewards": self.rewards[idx],
            "dones": self.dones[idx],
            "next_obs": self.next_obs[idx],
        }

    def clear(self):
        self.cursor = 0
        self.fill = 0
        for w in self._pending:
            w.clear()

    # checkpoint support -------------------------------------------------------
    def state_dict(self):
        n = self.fill
        pending = [[[s.tolist(), a.tolist(), r, d] for (s, a, r, d) in w]
                   for w in self._pending]
        return {
            "cursor": self.cursor,
            "fill": n,
            "obs": self.obs[:n].copy(),
            "actions": self.actions[:n].copy(),
            "rewards": self.rewards[:n].copy(),
            "dones": self.dones[:n].copy(),
            "next_obs": self.next_obs[:n].copy(),
            "pending": pending,
        }

    def load_state_dict(self, state):
        n = int(state["fill"])
        self.clear()
        for key in ("obs", "actions", "rewards", "dones", "next_obs"):
            getattr(self, key)[:n] = state[key]
        self.fill = n
        self.cursor = int(state["cursor"])
        for w, items in zip(self._pending, state["pending"]):
            for s, a, r, d in items:
                w.append((np.array(s, dtype=np.float64), np.array(a, dtype=np.float64),
                          float(r), bool(d)))
