"""Gradient ascent on the surrogate landscape, ranked on the true objective."""
from __future__ import annotations

import numpy as np

from .. import ndmath as nd
from ..envpack import surrogate_landscape_eval
from ..seeding import seed_streams
from .base import Learner


class SurrogateLearner(Learner):
    """Two-parameter learner for testing the evolution loop in isolation.

    Each env step is one plain gradient-ascent step on the surrogate
    ``1.2 - h1*t1^2 - h2*t2^2`` and counts as a one-step episode whose return is
    the true objective ``1.2 - t1^2 - t2^2`` at the new point.
    """

    kind = "surrogate"

    def __init__(self, agent_id, hypers, cfg, master_seed):
        super().__init__(agent_id, hypers, cfg.ascent_lr)
        self.cfg = cfg
        init = seed_streams(master_seed, agent_id, -1, "init")
        theta = init.uniform(cfg.theta_init_low, cfg.theta_init_high, size=2)
        self.theta = nd.ParamTensor(theta, requires_grad=True, name="theta")
        self.networks = {"theta": [self.theta]}

    def surrogate_grad(self):
        h = np.array([self.hypers["h1"], self.hypers["h2"]])
        with nd.GradientTape():
            obj = 1.2 - nd.sum(nd.ParamTensor(h) * nd.square(self.theta))
        self.theta.grad = None
        nd.backward(obj)
        return self.theta.grad

    def true_objective(self):
        return surrogate_landscape_eval(self.theta.values, (1.0, 1.0))[0]

    def act_deterministic(self, obs=None):
        return self.theta.values.copy()

    def train_iteration(self):
        self.last_returns = []
        for _ in range(self.cfg.horizon):
            grad = self.surrogate_grad()
            if not np.all(np.isfinite(grad)):
                raise nd.PoisonedUpdateError("theta")
            self.theta.values = self.theta.values + self.current_lr * grad
            self.record_returns([(0, self.true_objective())])
            self.env_steps += 1
        return {"true_objective": self.true_objective()}
