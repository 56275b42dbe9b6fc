# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled twins of the kernels in ``_kernels_py``."""
import numpy as np
cimport numpy as cnp
from libc.math cimport sin, sqrt, fmod, M_PI

cnp.import_array()

BACKEND = "cython"


def gae(double[:, :] rewards, double[:, :] values, double[:, :] dones,
        double gamma, double lam):
    cdef Py_ssize_t T = rewards.shape[0]
    cdef Py_ssize_t N = rewards.shape[1]
    cdef Py_ssize_t t, i
    cdef double nonterminal, delta, last
    out = np.zeros((T, N), dtype=np.float64)
    cdef double[:, ::1] adv = out
    for i in range(N):
        last = 0.0
        for t in range(T - 1, -1, -1):
            nonterminal = 1.0 - dones[t, i]
            delta = rewards[t, i] + gamma * values[t + 1, i] * nonterminal - values[t, i]
            last = delta + gamma * lam * nonterminal * last
            adv[t, i] = last
    return out


def nstep_returns(double[:, :] rewards, double[:, :] dones, double[:] bootstrap,
                  double gamma):
    cdef Py_ssize_t B = rewards.shape[0]
    cdef Py_ssize_t n = rewards.shape[1]
    cdef Py_ssize_t b, k
    cdef double acc, alive, disc
    out = np.zeros(B, dtype=np.float64)
    cdef double[::1] res = out
    for b in range(B):
        acc = 0.0
        alive = 1.0
        disc = 1.0
        for k in range(n):
            acc = acc + alive * disc * rewards[b, k]
            alive = alive * (1.0 - dones[b, k])
            disc = disc * gamma
        res[b] = acc + alive * disc * bootstrap[b]
    return out


def adam_update(double[::1] param, double[::1] grad, double[::1] m, double[::1] v,
                double lr, double beta1, double beta2, double eps,
                double corr1, double corr2):
    cdef Py_ssize_t i, n = param.shape[0]
    cdef double g, mhat, vhat
    for i in range(n):
        g = grad[i]
        m[i] = m[i] * beta1 + (1.0 - beta1) * g
        v[i] = v[i] * beta2 + (1.0 - beta2) * (g * g)
        mhat = m[i] / corr1
        vhat = v[i] / corr2
        param[i] = param[i] - lr * mhat / (sqrt(vhat) + eps)


cdef inline double _wrap(double theta) nogil:
    cdef double two_pi = 2.0 * M_PI
    cdef double r = fmod(M_PI - theta, two_pi)
    if r != 0.0 and r < 0.0:
        r += two_pi
    return M_PI - r


def wrap_angle(theta):
    arr = np.ascontiguousarray(theta, dtype=np.float64)
    out = np.empty_like(arr)
    cdef double[::1] src = arr.reshape(-1)
    cdef double[::1] dst = out.reshape(-1)
    cdef Py_ssize_t i
    for i in range(src.shape[0]):
        dst[i] = _wrap(src[i])
    return out


def pendulum_dynamics(double[:] theta, double[:] thetadot, double[:] u,
                      double g, double m, double l, double dt, double max_speed):
    cdef Py_ssize_t i, n = theta.shape[0]
    cdef double w, acc, td
    th_out = np.empty(n, dtype=np.float64)
    td_out = np.empty(n, dtype=np.float64)
    rw_out = np.empty(n, dtype=np.float64)
    cdef double[::1] th_v = th_out
    cdef double[::1] td_v = td_out
    cdef double[::1] rw_v = rw_out
    cdef double k_grav = 3.0 * g / (2.0 * l)
    cdef double k_ctrl = 3.0 / (m * l * l)
    for i in range(n):
        w = _wrap(theta[i])
        rw_v[i] = -(w * w + 0.1 * (thetadot[i] * thetadot[i]) + 0.001 * (u[i] * u[i]))
        acc = k_grav * sin(theta[i]) + k_ctrl * u[i]
        td = thetadot[i] + acc * dt
        if td > max_speed:
            td = max_speed
        elif td < -max_speed:
            td = -max_speed
        td_v[i] = td
        th_v[i] = theta[i] + td * dt
    return th_out, td_out, rw_out
