"""PPO with a fixed, state-independent action std and KL-adaptive learning rate."""
from __future__ import annotations

import math

import numpy as np

from .. import ndmath as nd
from ..seeding import seed_streams
from .base import EnvLearner
from .networks import MLP
from .returns import TrajectoryBatch, gae_advantages, kl_adapt_lr

STD_FLOOR = 1e-9


def gaussian_log_prob_np(x, mean, std):
    std = np.maximum(std, STD_FLOOR)
    z = (x - mean) / std
    return np.sum(-0.5 * z * z - np.log(std) - 0.5 * nd.LOG_2PI, axis=-1)


def normalize_advantages(adv):
    return (adv - adv.mean()) / max(adv.std(), 1e-8)


class PPOLearner(EnvLearner):
    kind = "ppo"

    def __init__(self, agent_id, hypers, cfg, env_name, num_envs, master_seed):
        super().__init__(agent_id, hypers, cfg.lr_init, env_name, num_envs, master_seed)
        self.cfg = cfg
        init = seed_streams(master_seed, agent_id, -1, "init")
        sizes = cfg.hidden_units
        self.actor = MLP([self.obs_dim, *sizes, self.act_dim], cfg.activation, init,
                         out_scale=0.01, name="actor")
        self.critic = MLP([self.obs_dim, *sizes, 1], cfg.activation, init, name="critic")
        self.networks = {"actor": self.actor, "critic": self.critic}
        self.optimizers = {
            "actor": nd.AdamState.for_params(self.actor.params),
            "critic": nd.AdamState.for_params(self.critic.params),
        }
        self.rngs["action"] = seed_streams(master_seed, agent_id, -1, "action")
        self.rngs["minibatch"] = seed_streams(master_seed, agent_id, -1, "minibatch")

    @property
    def actor_std(self):
        return max(float(self.hypers["actor_std"]), STD_FLOOR)

    def act_deterministic(self, obs):
        return self.to_env_action(self.actor.forward_np(obs))

    def collect_rollout(self, horizon=None):
        """Run the stochastic policy for ``horizon`` steps on every env.

        Returns (TrajectoryBatch, bootstrap values for the final observation).
        """
        T = horizon or self.cfg.horizon
        N = self.env.num_envs
        obs_buf = np.zeros((T, N, self.obs_dim))
        act_buf = np.zeros((T, N, self.act_dim))
        logp_buf = np.zeros((T, N))
        rew_buf = np.zeros((T, N))
        val_buf = np.zeros((T, N))
        done_buf = np.zeros((T, N))
        std = self.actor_std
        rng = self.rngs["action"]
        obs = self.env.obs
        for t in range(T):
            mean = self.actor.forward_np(obs)
            value = self.critic.forward_np(obs)[:, 0]
            action = mean + std * rng.standard_normal(mean.shape)
            result = self.env.step(self.to_env_action(action))
            obs_buf[t] = obs
            act_buf[t] = action
            logp_buf[t] = gaussian_log_prob_np(action, mean, std)
            rew_buf[t] = result.rewards
            val_buf[t] = value
            done_buf[t] = result.dones
            self.record_returns(result.completed_episode_returns)
            obs = result.next_obs
        self.env_steps += T * N
        bootstrap = self.critic.forward_np(obs)[:, 0]
        traj = TrajectoryBatch(obs_buf, act_buf, logp_buf, rew_buf, val_buf, done_buf)
        return traj, bootstrap

    def _losses(self, obs, actions, logp_old, adv, returns, std_t):
        mean = self.actor(obs)
        logp = nd.gaussian_log_prob(nd.ParamTensor(actions), mean, std_t)
        ratio = nd.exp(logp - logp_old)
        adv_t = nd.ParamTensor(adv)
        surr1 = ratio * adv_t
        eps = self.cfg.clip_eps
        surr2 = nd.clamp(ratio, 1.0 - eps, 1.0 + eps) * adv_t
        actor_loss = -nd.mean(nd.minimum(surr1, surr2))
        values = nd.reshape(self.critic(obs), (obs.shape[0],))
        value_loss = 0.5 * nd.mean(nd.square(values - returns))
        return actor_loss, value_loss, logp, ratio

    def entropy(self):
        std = self.actor_std
        return self.act_dim * (0.5 + 0.5 * nd.LOG_2PI + math.log(std))

    def ppo_update(self, traj, bootstrap):
        cfg = self.cfg
        if traj.rewards.size == 0:
            raise nd.ContractError("empty trajectory batch")
        adv, returns = gae_advantages(traj, cfg.gamma, cfg.gae_lambda, bootstrap,
                                      reward_scale=cfg.reward_scale)
        B = traj.rewards.size
        obs = traj.obs.reshape(B, self.obs_dim)
        actions = traj.actions.reshape(B, self.act_dim)
        logp_old = traj.log_probs.reshape(B)
        adv = normalize_advantages(adv.reshape(B))
        returns = returns.reshape(B)
        std_t = nd.ParamTensor(np.full(self.act_dim, self.actor_std))
        entropy = self.entropy()
        ent_coef = float(self.hypers["entropy_coeff"])
        params = self.actor.params + self.critic.params
        n_actor = len(self.actor.params)
        mb = min(cfg.minibatch_size, B)
        epoch_losses, clip_fracs = [], []
        rng = self.rngs["minibatch"]
        for _ in range(cfg.epochs):
            perm = rng.permutation(B)
            losses = []
            for start in range(0, B, mb):
                idx = perm[start:start + mb]
                with nd.GradientTape():
                    actor_loss, value_loss, _, ratio = self._losses(
                        obs[idx], actions[idx], logp_old[idx], adv[idx], returns[idx], std_t)
                    loss = actor_loss - ent_coef * entropy + value_loss
                if not np.isfinite(loss.values):
                    raise nd.PoisonedUpdateError("ppo.loss", "loss")
                for p in params:
                    p.grad = None
                nd.backward(loss)
                grads = [np.zeros(p.shape) if p.grad is None else p.grad.copy() for p in params]
                nd.clip_grad_norm(grads, cfg.max_grad_norm)
                nd.adam_step(self.actor.params, grads[:n_actor], self.optimizers["actor"],
                             self.current_lr)
                nd.adam_step(self.critic.params, grads[n_actor:], self.optimizers["critic"],
                             self.current_lr)
                losses.append(float(loss.values))
                clip_fracs.append(float(np.mean(np.abs(ratio.values - 1.0) > cfg.clip_eps)))
            epoch_losses.append(float(np.mean(losses)))
        mean_new = self.actor.forward_np(obs)
        logp_new = gaussian_log_prob_np(actions, mean_new, self.actor_std)
        kl = float(np.mean(logp_old - logp_new))
        lr_used = self.current_lr
        self.current_lr = kl_adapt_lr(self.current_lr, kl, self.hypers["kl_threshold"],
                                      cfg.lr_gain, (cfg.lr_min, cfg.lr_max))
        return {
            "kl": kl,
            "clip_frac": float(np.mean(clip_fracs)),
            "entropy": entropy,
            "epoch_losses": epoch_losses,
            "lr_used": lr_used,
        }

    def train_iteration(self):
        self.last_returns = []
        traj, bootstrap = self.collect_rollout()
        return self.ppo_update(traj, bootstrap)

