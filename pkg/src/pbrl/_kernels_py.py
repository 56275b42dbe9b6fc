"""Pure-numpy implementations of the hot kernels.

Every function here has a twin with the same signature in ``_kernels_ext.pyx``.
Loop order and operation order are kept identical between the two so the
compiled path reproduces these results to the last bit wherever libm agrees.
"""
import numpy as np

BACKEND = "python"


def gae(rewards, values, dones, gamma, lam):
    """Backward GAE scan. rewards/dones are (T, N), values is (T+1, N)."""
    T, N = rewards.shape
    adv = np.zeros((T, N), dtype=np.float64)
    last = np.zeros(N, dtype=np.float64)
    for t in range(T - 1, -1, -1):
        nonterminal = 1.0 - dones[t]
        delta = rewards[t] + gamma * values[t + 1] * nonterminal - values[t]
        last = delta + gamma * lam * nonterminal * last
        adv[t] = last
    return adv


def nstep_returns(rewards, dones, bootstrap, gamma):
    """Discounted n-step sums, truncated at the first done inside each segment.

    rewards/dones are (B, n); bootstrap is (B,). The bootstrap term is added
    with weight gamma**n only for segments that contain no done.
    """
    B, n = rewards.shape
    out = np.zeros(B, dtype=np.float64)
    alive = np.ones(B, dtype=np.float64)
    disc = 1.0
    for k in range(n):
        out = out + alive * disc * rewards[:, k]
        alive = alive * (1.0 - dones[:, k])
        disc = disc * gamma
    return out + alive * disc * bootstrap


def adam_update(param, grad, m, v, lr, beta1, beta2, eps, corr1, corr2):
    """In-place Adam on flat float64 arrays. corr1/corr2 are 1 - beta**t."""
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * (grad * grad)
    mhat = m / corr1
    vhat = v / corr2
    param -= lr * mhat / (np.sqrt(vhat) + eps)


def wrap_angle(theta):
    """Map angles into (-pi, pi]."""
    return np.pi - np.mod(np.pi - theta, 2.0 * np.pi)


def pendulum_dynamics(theta, thetadot, u, g, m, l, dt, max_speed):
    """One semi-implicit Euler step for a batch of pendulums.

    Returns (theta', thetadot', reward); reward is evaluated on the pre-step
    state and the applied torque.
    """
    w = wrap_angle(theta)
    reward = -(w * w + 0.1 * (thetadot * thetadot) + 0.001 * (u * u))
    acc = (3.0 * g / (2.0 * l)) * np.sin(theta) + (3.0 / (m * l * l)) * u
    new_thetadot = np.clip(thetadot + acc * dt, -max_speed, max_speed)
    new_theta = theta + new_thetadot * dt
    return new_theta, new_thetadot, reward
