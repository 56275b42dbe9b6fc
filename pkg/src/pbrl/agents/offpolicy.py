"""SAC and DDPG over twin Q critics with n-step targets.

Both learners keep actions normalized to [-1, 1]; ``to_env_action`` maps them
onto the environment's bounds. Critics see (obs, normalized action).
"""
from __future__ import annotations

import math

import numpy as np

from .. import ndmath as nd
from ..envpack import env_spec
from ..seeding import seed_streams
from .base import EnvLearner
from .networks import MLP, polyak_update
from .replay import ReplayStore
from .returns import mixed_exploration_stds, nstep_targets

LOG_STD_MIN = -5.0
LOG_STD_MAX = 2.0


def critic_loss_fn(q1, q2, obs, actions, targets):
    """Sum of the two heads' mean squared errors against shared targets."""
    x = nd.concat([nd.ParamTensor(obs), nd.ParamTensor(actions)], axis=1)
    B = obs.shape[0]
    t = nd.ParamTensor(targets)
    e1 = nd.reshape(q1(x), (B,)) - t
    e2 = nd.reshape(q2(x), (B,)) - t
    return nd.mean(nd.square(e1)) + nd.mean(nd.square(e2))


def min_q_np(q1, q2, obs, actions):
    x = np.concatenate([obs, actions], axis=1)
    return np.minimum(q1.forward_np(x)[:, 0], q2.forward_np(x)[:, 0])


class OffPolicyLearner(EnvLearner):
    """Shared collection, replay and critic machinery."""

    def __init__(self, agent_id, hypers, cfg, env_name, num_envs, master_seed, actor_out):
        super().__init__(agent_id, hypers, hypers["actor_lr"], env_name, num_envs, master_seed)
        self.cfg = cfg
        init = seed_streams(master_seed, agent_id, -1, "init")
        sizes = cfg.hidden_units
        self.actor = MLP([self.obs_dim, *sizes, actor_out], cfg.activation, init,
                         out_scale=0.01, name="actor")
        q_in = self.obs_dim + self.act_dim
        self.q1 = MLP([q_in, *sizes, 1], cfg.activation, init, name="q1")
        self.q2 = MLP([q_in, *sizes, 1], cfg.activation, init, name="q2")
        self.q1_target = self.q1.clone(name="q1_target")
        self.q2_target = self.q2.clone(name="q2_target")
        self.networks = {"actor": self.actor, "q1": self.q1, "q2": self.q2,
                         "q1_target": self.q1_target, "q2_target": self.q2_target}
        self.optimizers = {
            "actor": nd.AdamState.for_params(self.actor.params),
            "critic": nd.AdamState.for_params(self.q1.params + self.q2.params),
        }
        self.replay = ReplayStore(cfg.replay_size, self.obs_dim, self.act_dim, cfg.n_step,
                                  num_envs)
        self.rngs["action"] = seed_streams(master_seed, agent_id, -1, "action")
        self.rngs["sample"] = seed_streams(master_seed, agent_id, -1, "sample")
        self.rngs["update"] = seed_streams(master_seed, agent_id, -1, "update")

    @property
    def current_lr(self):
        return self.hypers["actor_lr"]

    @current_lr.setter
    def current_lr(self, value):
        pass  # learning rates are hyperparameters here

    @property
    def critic_params(self):
        return self.q1.params + self.q2.params

    def explore_action(self, obs):
        raise NotImplementedError

    def collect_rollout(self, horizon=None):
        """Step all envs ``horizon`` times, pushing transitions into the replay."""
        T = horizon or self.cfg.horizon
        N = self.env.num_envs
        for _ in range(T):
            obs = self.env.obs
            action = self.explore_action(obs)
            result = self.env.step(self.to_env_action(action))
            self.replay.add_step(obs, action, result.rewards * self.cfg.reward_scale,
                                 result.dones, result.next_obs)
            self.record_returns(result.completed_episode_returns)
            self.env_steps += N

    def sample_batch(self):
        return self.replay.sample(self.cfg.batch_size, self.rngs["sample"], self.cfg.warmup)

    def _critic_step(self, batch, targets):
        with nd.GradientTape():
            loss = critic_loss_fn(self.q1, self.q2, batch["obs"], batch["actions"], targets)
        if not np.isfinite(loss.values):
            raise nd.PoisonedUpdateError("critic.loss", "loss")
        params = self.critic_params
        for p in params:
            p.grad = None
        nd.backward(loss)
        grads = [p.grad.copy() for p in params]
        nd.clip_grad_norm(grads, self.cfg.max_grad_norm)
        nd.adam_step(params, grads, self.optimizers["critic"], self.hypers["critic_lr"])
        return float(loss.values)

    def _actor_step(self, loss):
        if not np.isfinite(loss.values):
            raise nd.PoisonedUpdateError("actor.loss", "loss")
        for p in self.actor.params + self.critic_params:
            p.grad = None
        nd.backward(loss)
        grads = [p.grad.copy() for p in self.actor.params]
        nd.clip_grad_norm(grads, self.cfg.max_grad_norm)
        nd.adam_step(self.actor.params, grads, self.optimizers["actor"], self.hypers["actor_lr"])
        return float(loss.values)

    def update(self, batch):
        raise NotImplementedError

    def train_iteration(self):
        self.last_returns = []
        stats = {}
        for _ in range(self.cfg.horizon):
            self.collect_rollout(1)
            if len(self.replay) >= self.cfg.warmup:
                for _ in range(self.cfg.epochs):
                    stats = self.update(self.sample_batch())
        return stats

    def on_replaced(self):
        super().on_replaced()
        self.replay.clear()

    def state_dict(self):
        state = super().state_dict()
        state["replay"] = self.replay.state_dict()
        return state

    def load_state_dict(self, state):
        super().load_state_dict(state)
        self.replay.load_state_dict(state["replay"])


class DDPGLearner(OffPolicyLearner):
    """Deterministic tanh actor with per-env mixed Gaussian exploration noise."""

    kind = "ddpg"

    def __init__(self, agent_id, hypers, cfg, env_name, num_envs, master_seed):
        act_dim = env_spec(env_name).act_dim
        super().__init__(agent_id, hypers, cfg, env_name, num_envs, master_seed, act_dim)
        self.actor_target = self.actor.clone(name="actor_target")
        self.networks["actor_target"] = self.actor_target

    def policy(self, obs):
        return nd.tanh(self.actor(obs))

    def act_deterministic(self, obs):
        return self.to_env_action(np.tanh(self.actor.forward_np(obs)))

    def noise_stds(self):
        return mixed_exploration_stds(self.env.num_envs, self.hypers["sigma_min"],
                                      self.hypers["sigma_max"])

    def explore_action(self, obs):
        mean = np.tanh(self.actor.forward_np(obs))
        sig = self.noise_stds()[:, None]
        noise = self.rngs["action"].standard_normal(mean.shape) * sig
        return np.clip(mean + noise, -1.0, 1.0)

    def compute_targets(self, batch):
        next_a = np.tanh(self.actor_target.forward_np(batch["next_obs"]))
        boot = min_q_np(self.q1_target, self.q2_target, batch["next_obs"], next_a)
        gamma = self.cfg.gamma
        return nstep_targets(batch["rewards"], batch["dones"], boot, gamma)

    def update(self, batch):
        targets = self.compute_targets(batch)
        critic_loss = self._critic_step(batch, targets)
        with nd.GradientTape():
            obs = nd.ParamTensor(batch["obs"])
            x = nd.concat([obs, self.policy(obs)], axis=1)
            actor_loss = -nd.mean(self.q1(x))
        actor_loss = self._actor_step(actor_loss)
        tau = self.cfg.tau
        polyak_update(self.q1_target, self.q1, tau)
        polyak_update(self.q2_target, self.q2, tau)
        polyak_update(self.actor_target, self.actor, tau)
        return {"critic_loss": critic_loss, "actor_loss": actor_loss}


def squashed_sample(mean, log_std, eps):
    """Reparameterized tanh-Gaussian sample and its log density.

    ``mean``/``log_std`` are (B, d) tensors, ``eps`` a (B, d) array of standard
    normal draws. Returns (action, log_prob of shape (B,)).
    """
    std = nd.exp(log_std)
    u = mean + std * nd.ParamTensor(eps)
    logp = nd.gaussian_log_prob(u, mean, std) - nd.tanh_log_det(u)
    return nd.tanh(u), logp


class SACLearner(OffPolicyLearner):
    """Tanh-squashed Gaussian actor with a learned temperature."""

    kind = "sac"

    def __init__(self, agent_id, hypers, cfg, env_name, num_envs, master_seed):
        act_dim = env_spec(env_name).act_dim
        super().__init__(agent_id, hypers, cfg, env_name, num_envs, master_seed, 2 * act_dim)
        self.log_alpha = nd.ParamTensor(math.log(cfg.init_alpha), requires_grad=True,
                                        name="log_alpha")
        self.networks["temperature"] = [self.log_alpha]
        self.optimizers["temperature"] = nd.AdamState.for_params([self.log_alpha])

    @property
    def alpha(self):
        return math.exp(float(self.log_alpha.values))

    def heads(self, obs):
        out = self.actor(obs)
        d = self.act_dim
        mean = nd.columns(out, 0, d)
        raw = nd.tanh(nd.columns(out, d, 2 * d))
        log_std = LOG_STD_MIN + 0.5 * (LOG_STD_MAX - LOG_STD_MIN) * (raw + 1.0)
        return mean, log_std

    def heads_np(self, obs):
        out = self.actor.forward_np(obs)
        d = self.act_dim
        raw = np.tanh(out[:, d:])
        return out[:, :d], LOG_STD_MIN + 0.5 * (LOG_STD_MAX - LOG_STD_MIN) * (raw + 1.0)

    def sample_np(self, obs, eps):
        mean, log_std = self.heads_np(obs)
        std = np.exp(log_std)
        u = mean + std * eps
        z = (u - mean) / std
        logp = np.sum(-0.5 * z * z - log_std - 0.5 * nd.LOG_2PI, axis=1)
        logp -= np.sum(2.0 * (math.log(2.0) - u - np.logaddexp(0.0, -2.0 * u)), axis=1)
        return np.tanh(u), logp

    def act_deterministic(self, obs):
        mean, _ = self.heads_np(obs)
        return self.to_env_action(np.tanh(mean))

    def explore_action(self, obs):
        eps = self.rngs["action"].standard_normal((obs.shape[0], self.act_dim))
        action, _ = self.sample_np(obs, eps)
        return action

    def compute_targets(self, batch):
        eps = self.rngs["update"].standard_normal((batch["obs"].shape[0], self.act_dim))
        next_a, next_logp = self.sample_np(batch["next_obs"], eps)
        boot = min_q_np(self.q1_target, self.q2_target, batch["next_obs"], next_a)
        boot = boot - self.alpha * next_logp
        return nstep_targets(batch["rewards"], batch["dones"], boot, self.cfg.gamma)

    def actor_loss(self, obs, eps):
        """alpha * log pi(a|s) - min(Q1, Q2)(s, a) averaged over the batch."""
        obs_t = nd.ParamTensor(obs)
        mean, log_std = self.heads(obs_t)
        action, logp = squashed_sample(mean, log_std, eps)
        x = nd.concat([obs_t, action], axis=1)
        B = obs.shape[0]
        q = nd.minimum(nd.reshape(self.q1(x), (B,)), nd.reshape(self.q2(x), (B,)))
        return nd.mean(self.alpha * logp - q), logp

    def temperature_step(self, logp):
        """Gradient step on -log_alpha * mean(log pi + target_entropy)."""
        with nd.GradientTape():
            loss = -self.log_alpha * float(np.mean(logp + self.hypers["target_entropy"]))
        self.log_alpha.grad = None
        nd.backward(loss)
        nd.adam_step([self.log_alpha], [self.log_alpha.grad], self.optimizers["temperature"],
                     self.cfg.alpha_lr)
        return float(loss.values)

    def update(self, batch):
        targets = self.compute_targets(batch)
        critic_loss = self._critic_step(batch, targets)
        eps = self.rngs["update"].standard_normal((batch["obs"].shape[0], self.act_dim))
        with nd.GradientTape():
            loss, logp = self.actor_loss(batch["obs"], eps)
        logp_values = logp.values.copy()
        actor_loss = self._actor_step(loss)
        temp_loss = self.temperature_step(logp_values)
        polyak_update(self.q1_target, self.q1, self.cfg.tau)
        polyak_update(self.q2_target, self.q2, self.cfg.tau)
        return {"critic_loss": critic_loss, "actor_loss": actor_loss,
                "temperature_loss": temp_loss, "alpha": self.alpha,
                "entropy": float(-np.mean(logp_values))}
