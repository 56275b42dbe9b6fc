"""Multilayer perceptrons over ``ndmath`` tensors."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import ndmath as nd

ACTIVATIONS = {"tanh": nd.tanh, "relu": nd.relu}


@dataclass
class PolicyNetConfig:
    obs_dim: int
    act_dim: int
    hidden_units: list
    activation: str = "tanh"

    def __post_init__(self):
        if not self.hidden_units:
            raise ValueError("hidden_units must be non-empty")
        if self.obs_dim <= 0 or self.act_dim <= 0 or min(self.hidden_units) <= 0:
            raise ValueError("network dimensions must be positive")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {sorted(ACTIVATIONS)}")


class MLP:
    """Fully connected net: hidden layers use ``activation``, output is linear.

    Weights and biases start uniform in +-1/sqrt(fan_in); the last layer is
    further scaled by ``out_scale``.
    """

    def __init__(self, sizes, activation, rng, out_scale=1.0, name="mlp",
                 requires_grad=True):
        self.sizes = list(sizes)
        self.activation = activation
        self.name = name
        self.params = []
        n_layers = len(sizes) - 1
        for k, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            bound = 1.0 / np.sqrt(fan_in)
            scale = out_scale if k == n_layers - 1 else 1.0
            w = rng.uniform(-bound, bound, size=(fan_in, fan_out)) * scale
            b = rng.uniform(-bound, bound, size=fan_out) * scale
            self.params.append(nd.ParamTensor(w, requires_grad, name=f"{name}.W{k}"))
            self.params.append(nd.ParamTensor(b, requires_grad, name=f"{name}.b{k}"))

    def __call__(self, x):
        act = ACTIVATIONS[self.activation]
        h = x if isinstance(x, nd.ParamTensor) else nd.ParamTensor(x)
        n_layers = len(self.params) // 2
        for k in range(n_layers):
            h = nd.linear(h, self.params[2 * k], self.params[2 * k + 1])
            if k < n_layers - 1:
                h = act(h)
        return h

    def forward_np(self, x):
        """Forward pass on raw arrays, never recorded."""
        h = np.asarray(x, dtype=np.float64)
        fn = np.tanh if self.activation == "tanh" else (lambda z: np.maximum(z, 0.0))
        n_layers = len(self.params) // 2
        for k in range(n_layers):
            h = h @ self.params[2 * k].values + self.params[2 * k + 1].values
            if k < n_layers - 1:
                h = fn(h)
        return h

    def clone(self, requires_grad=False, name=None):
        other = MLP.__new__(MLP)
        other.sizes = list(self.sizes)
        other.activation = self.activation
        other.name = name or self.name
        other.params = [nd.ParamTensor(p.values.copy(), requires_grad,
                                       name=p.name.replace(self.name, other.name, 1))
                        for p in self.params]
        return other

    def load_values(self, arrays):
        for p, a in zip(self.params, arrays):
            if p.shape != np.shape(a):
                raise nd.DimensionError(f"{p.name}: expected {p.shape}, got {np.shape(a)}")
            p.values = np.array(a, dtype=np.float64)

    def values(self):
        return [p.values for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def grads(self):
        return [np.zeros(p.shape) if p.grad is None else p.grad for p in self.params]


def polyak_update(target, online, tau):
    """target <- (1 - tau) * target + tau * online, in place."""
    for t, o in zip(target.params, online.params):
        t.values = (1.0 - tau) * t.values + tau * o.values
