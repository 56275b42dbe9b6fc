"""State shared by every population member."""
from __future__ import annotations

import hashlib
import math

import numpy as np

from ..envpack import EnvBatchState, VecEnv
from ..ndmath import AdamState, PoisonedUpdateError
from ..seeding import restore_rng, rng_state, seed_streams


class Learner:
    """One population member: parameters, optimizer state, hypers, fitness window.

    Subclasses fill ``networks`` (name -> MLP or list of ParamTensor),
    ``optimizers`` (name -> AdamState) and ``rngs`` (name -> Generator), and
    implement ``train_iteration`` and ``act_deterministic``.
    """

    kind = "base"

    def __init__(self, agent_id, hypers, lr_init):
        self.agent_id = agent_id
        self.hypers = dict(hypers)
        self.fitness_window = []
        self.env_steps = 0
        self.current_lr = lr_init
        self.lr_init = lr_init
        self.last_event_fitness = math.nan
        self.networks = {}
        self.optimizers = {}
        self.rngs = {}
        self.last_returns = []

    # parameters ---------------------------------------------------------------
    def param_tensors(self):
        out = []
        for net in self.networks.values():
            out.extend(net.params if hasattr(net, "params") else net)
        return out

    def param_arrays(self):
        return {p.name: p.values for p in self.param_tensors()}

    def param_digest(self):
        h = hashlib.sha256()
        for p in self.param_tensors():
            h.update(p.name.encode())
            h.update(np.ascontiguousarray(p.values).tobytes())
        return h.hexdigest()

    def transfer_from(self, other):
        """Copy parameters and optimizer state (not env, rngs or replay)."""
        for mine, theirs in zip(self.param_tensors(), other.param_tensors()):
            mine.values = theirs.values.copy()
        self.optimizers = {k: v.copy() for k, v in other.optimizers.items()}

    def on_replaced(self):
        self.current_lr = self.lr_init
        self.fitness_window.clear()

    # bookkeeping ----------------------------------------------------------------
    def record_returns(self, completed):
        for _, ret in completed:
            self.fitness_window.append(ret)
            self.last_returns.append(ret)

    def train_iteration(self):
        raise NotImplementedError

    def act_deterministic(self, obs):
        raise NotImplementedError

    # checkpoint ----------------------------------------------------------------
    def state_dict(self):
        return {
            "kind": self.kind,
            "agent_id": self.agent_id,
            "hypers": dict(self.hypers),
            "fitness_window": list(self.fitness_window),
            "env_steps": self.env_steps,
            "current_lr": self.current_lr,
            "last_event_fitness": self.last_event_fitness,
            "params": {p.name: p.values.copy() for p in self.param_tensors()},
            "optimizers": {
                name: {"step": opt.step, "m": list(opt.m), "v": list(opt.v)}
                for name, opt in self.optimizers.items()
            },
            "rngs": {name: rng_state(r) for name, r in self.rngs.items()},
        }

    def load_state_dict(self, state):
        if state["kind"] != self.kind:
            raise ValueError(f"checkpoint holds a {state['kind']} learner, not {self.kind}")
        self.hypers = dict(state["hypers"])
        self.fitness_window = list(state["fitness_window"])
        self.env_steps = int(state["env_steps"])
        self.current_lr = float(state["current_lr"])
        self.last_event_fitness = float(state["last_event_fitness"])
        params = state["params"]
        for p in self.param_tensors():
            p.values = np.array(params[p.name], dtype=np.float64).reshape(p.shape)
        for name, opt in state["optimizers"].items():
            self.optimizers[name] = AdamState(step=int(opt["step"]),
                                              m=[np.array(a) for a in opt["m"]],
                                              v=[np.array(a) for a in opt["v"]])
        for name, st in state["rngs"].items():
            self.rngs[name] = restore_rng(st)


class EnvLearner(Learner):
    """Learner that drives its own vectorized control environment."""

    def __init__(self, agent_id, hypers, lr_init, env_name, num_envs, master_seed):
        super().__init__(agent_id, hypers, lr_init)
        for i in range(num_envs):
            self.rngs[f"reset_{i}"] = seed_streams(master_seed, agent_id, i, "reset")
        self.env = VecEnv(env_name, num_envs, self._reset_rngs(num_envs))
        self.obs_dim = self.env.spec.obs_dim
        self.act_dim = self.env.spec.act_dim

    def _reset_rngs(self, num_envs):
        return [self.rngs[f"reset_{i}"] for i in range(num_envs)]

    def to_env_action(self, normalized):
        """Map actions in [-1, 1] onto the env's bounds."""
        if not np.all(np.isfinite(normalized)):
            raise PoisonedUpdateError(f"{self.kind}.actor", "action")
        lo, hi = self.env.spec.action_low, self.env.spec.action_high
        return lo + (np.clip(normalized, -1.0, 1.0) + 1.0) * (0.5 * (hi - lo))

    def state_dict(self):
        state = super().state_dict()
        s = self.env.state
        state["env"] = {
            "obs": s.obs.copy(),
            "internal_state": s.internal_state.copy(),
            "step_counts": s.step_counts.copy(),
            "episode_returns_accum": s.episode_returns_accum.copy(),
        }
        return state

    def load_state_dict(self, state):
        super().load_state_dict(state)
        e = state["env"]
        self.env.state = EnvBatchState(
            self.env.num_envs, np.array(e["obs"], dtype=np.float64),
            np.array(e["internal_state"], dtype=np.float64),
            np.array(e["step_counts"], dtype=np.int64),
            np.array(e["episode_returns_accum"], dtype=np.float64))
        self.env.reset_rngs = self._reset_rngs(self.env.num_envs)
