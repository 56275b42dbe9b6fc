"""Inner-loop learners: PPO, SAC, DDPG and the surrogate-ascent testbed."""
from .base import EnvLearner, Learner
from .networks import MLP, PolicyNetConfig, polyak_update
from .offpolicy import DDPGLearner, SACLearner
from .ppo import PPOLearner
from .replay import ReplayStore
from .returns import (TrajectoryBatch, gae_advantages, kl_adapt_lr,
                      mixed_exploration_stds, nstep_targets)
from .surrogate import SurrogateLearner

LEARNERS = {
    "ppo": PPOLearner,
    "sac": SACLearner,
    "ddpg": DDPGLearner,
}


def build_learner(cfg, agent_id, hypers, master_seed):
    """Construct the learner a RunConfig asks for."""
    if cfg.env == "surrogate":
        return SurrogateLearner(agent_id, hypers, cfg.algo, master_seed)
    cls = LEARNERS[cfg.algorithm]
    return cls(agent_id, hypers, cfg.algo, cfg.env, cfg.envs_per_agent, master_seed)


__all__ = [
    "DDPGLearner", "EnvLearner", "Learner", "LEARNERS", "MLP", "PPOLearner",
    "PolicyNetConfig", "ReplayStore", "SACLearner", "SurrogateLearner",
    "TrajectoryBatch", "build_learner", "gae_advantages", "kl_adapt_lr",
    "mixed_exploration_stds", "nstep_targets", "polyak_update",
]
