"""Dense float64 tensors with tape-based reverse-mode differentiation.

Only what the actor-critic MLPs need is here. Broadcasting is limited to
scalar-with-tensor and equal shapes; anything else raises ``DimensionError``.
``linear`` and ``gaussian_log_prob`` handle their own row-wise broadcasting
internally.

Usage::

    with GradientTape():
        loss = mean(square(mlp(x)))
    backward(loss)
    W.grad
"""
from __future__ import annotations

import math
import threading
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import kernels

LOG_2PI = math.log(2.0 * math.pi)
LOG_2 = math.log(2.0)


class DimensionError(ValueError):
    pass


class DomainError(ValueError):
    pass


class ContractError(RuntimeError):
    pass


class PoisonedUpdateError(FloatingPointError):
    """Raised when a gradient or parameter block contains NaN/Inf."""

    def __init__(self, block, what="gradient"):
        super().__init__(f"non-finite {what} in parameter block {block!r}")
        self.block = block


class ParamTensor:
    __slots__ = ("values", "grad", "requires_grad", "name", "_tape", "__weakref__")

    def __init__(self, values, requires_grad=False, name=None):
        self.values = np.array(values, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name
        self._tape = None

    @property
    def shape(self):
        return self.values.shape

    @property
    def size(self):
        return self.values.size

    def item(self):
        return float(self.values)

    def detach(self):
        return ParamTensor(self.values, requires_grad=False)

    def check_finite(self, what="values"):
        if not np.all(np.isfinite(self.values)):
            raise PoisonedUpdateError(self.name or "<unnamed>", what)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"ParamTensor(shape={self.shape}{flag})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


@dataclass
class _Node:
    inputs: tuple
    output: ParamTensor
    vjp: Callable


@dataclass
class GradientTape:
    """Ordered record of differentiable ops performed while it is active."""

    nodes: list = field(default_factory=list)

    def __enter__(self):
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc):
        _tape_stack().pop()
        return False

    def record(self, inputs, output, vjp):
        self.nodes.append(_Node(inputs, output, vjp))
        output._tape = self

    def reset(self):
        for node in self.nodes:
            node.output._tape = None
        self.nodes.clear()

    def backward(self, loss):
        if loss.values.size != 1 or loss.values.ndim != 0:
            raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
        if not self.nodes:
            raise ContractError("backward called on an empty tape")
        grads = {id(loss): np.ones((), dtype=np.float64)}
        leaves = {}
        for node in reversed(self.nodes):
            g = grads.pop(id(node.output), None)
            if g is None:
                continue
            in_grads = node.vjp(g)
            for x, gx in zip(node.inputs, in_grads):
                if gx is None or not x.requires_grad:
                    continue
                key = id(x)
                if x._tape is None:
                    leaves[key] = x
                if key in grads:
                    grads[key] = grads[key] + gx
                else:
                    grads[key] = gx
        for key, leaf in leaves.items():
            leaf.grad = np.array(grads[key], dtype=np.float64).reshape(leaf.shape)
        self.reset()


_local = threading.local()


def _tape_stack():
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = _local.stack = []
    return stack


@contextmanager
def no_grad():
    """Suspend recording for the enclosed block."""
    stack = _tape_stack()
    saved = list(stack)
    stack.clear()
    try:
        yield
    finally:
        stack.extend(saved)


def backward(loss):
    """Populate ``.grad`` on every requires_grad leaf reachable from ``loss``."""
    if not isinstance(loss, ParamTensor):
        raise ContractError("loss must be a ParamTensor")
    if loss._tape is None:
        raise ContractError("loss was not recorded on any tape")
    loss._tape.backward(loss)


def _as_tensor(x):
    if isinstance(x, ParamTensor):
        return x
    return ParamTensor(x)


def _emit(values, inputs, vjp):
    out = ParamTensor.__new__(ParamTensor)
    out.values = values
    out.grad = None
    out.name = None
    out._tape = None
    out.requires_grad = any(x.requires_grad for x in inputs)
    if out.requires_grad:
        stack = _tape_stack()
        if stack:
            stack[-1].record(tuple(inputs), out, vjp)
    return out


def _check_broadcast(a, b, op):
    if a.shape == b.shape or a.values.ndim == 0 or b.values.ndim == 0:
        return
    raise DimensionError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    return np.asarray(g.sum()).reshape(shape)


# --- binary elementwise -------------------------------------------------------

def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b, "add")
    return _emit(a.values + b.values, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b, "sub")
    return _emit(a.values - b.values, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b, "mul")
    av, bv = a.values, b.values
    return _emit(av * bv, (a, b),
                 lambda g: (_unbroadcast(g * bv, a.shape), _unbroadcast(g * av, b.shape)))


def div(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b, "div")
    av, bv = a.values, b.values
    out = av / bv
    return _emit(out, (a, b),
                 lambda g: (_unbroadcast(g / bv, a.shape),
                            _unbroadcast(-g * out / bv, b.shape)))


def minimum(a, b):
    """Elementwise min; on ties the gradient goes to ``a``."""
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b, "minimum")
    take_a = a.values <= b.values
    return _emit(np.where(take_a, a.values, b.values), (a, b),
                 lambda g: (_unbroadcast(np.where(take_a, g, 0.0), a.shape),
                            _unbroadcast(np.where(take_a, 0.0, g), b.shape)))


# --- unary elementwise --------------------------------------------------------

def neg(a):
    a = _as_tensor(a)
    return _emit(-a.values, (a,), lambda g: (-g,))


def square(a):
    a = _as_tensor(a)
    av = a.values
    return _emit(av * av, (a,), lambda g: (2.0 * av * g,))


def tanh(a):
    a = _as_tensor(a)
    out = np.tanh(a.values)
    return _emit(out, (a,), lambda g: (g * (1.0 - out * out),))


def relu(a):
    a = _as_tensor(a)
    mask = a.values > 0.0
    return _emit(np.where(mask, a.values, 0.0), (a,), lambda g: (g * mask,))


def exp(a):
    a = _as_tensor(a)
    out = np.exp(a.values)
    return _emit(out, (a,), lambda g: (g * out,))


def log(a):
    a = _as_tensor(a)
    if np.any(a.values <= 0.0):
        raise DomainError("log of non-positive value")
    av = a.values
    return _emit(np.log(av), (a,), lambda g: (g / av,))


def softplus(a):
    """log(1 + exp(x)), computed without overflow."""
    a = _as_tensor(a)
    av = a.values
    out = np.maximum(av, 0.0) + np.log1p(np.exp(-np.abs(av)))
    sig = 0.5 * (1.0 + np.tanh(0.5 * av))
    return _emit(out, (a,), lambda g: (g * sig,))


def clamp(a, lo=None, hi=None):
    """Clip to [lo, hi]; gradient passes only strictly inside the interval."""
    a = _as_tensor(a)
    av = a.values
    lo_v = -np.inf if lo is None else lo
    hi_v = np.inf if hi is None else hi
    inside = (av > lo_v) & (av < hi_v)
    return _emit(np.clip(av, lo_v, hi_v), (a,), lambda g: (g * inside,))


_ELEMENTWISE = {
    "add": add,
    "mul": mul,
    "tanh": tanh,
    "relu": relu,
    "exp": exp,
    "log": log,
    "clamp": clamp,
}


def elementwise(op_kind, *inputs, **kwargs):
    try:
        fn = _ELEMENTWISE[op_kind]
    except KeyError:
        raise ValueError(f"unknown elementwise op {op_kind!r}") from None
    return fn(*inputs, **kwargs)


# --- reductions and shape ops -------------------------------------------------

def sum(a, axis=None):  # noqa: A001 - mirrors numpy naming
    a = _as_tensor(a)
    shape = a.shape
    if axis is None:
        return _emit(np.asarray(a.values.sum()), (a,),
                     lambda g: (np.broadcast_to(g, shape).copy(),))
    out = a.values.sum(axis=axis)
    return _emit(out, (a,),
                 lambda g: (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),))


def mean(a, axis=None):
    a = _as_tensor(a)
    count = a.size if axis is None else a.shape[axis]
    return mul(sum(a, axis), 1.0 / count)


def concat(tensors, axis=1):
    tensors = [_as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)
    try:
        out = np.concatenate([t.values for t in tensors], axis=axis)
    except ValueError as exc:
        raise DimensionError(f"concat: {[t.shape for t in tensors]}") from exc

    def vjp(g):
        idx = [slice(None)] * g.ndim
        parts = []
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            idx[axis] = slice(lo, hi)
            parts.append(g[tuple(idx)])
        return tuple(parts)

    return _emit(out, tuple(tensors), vjp)


def columns(a, start, stop):
    """Slice columns [start, stop) of a 2-D tensor."""
    a = _as_tensor(a)
    shape = a.shape

    def vjp(g):
        full = np.zeros(shape)
        full[:, start:stop] = g
        return (full,)

    return _emit(a.values[:, start:stop].copy(), (a,), vjp)


def reshape(a, shape):
    a = _as_tensor(a)
    old = a.shape
    return _emit(a.values.reshape(shape), (a,), lambda g: (g.reshape(old),))


# --- linear algebra -----------------------------------------------------------

def matmul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.values.ndim != 2 or b.values.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    av, bv = a.values, b.values
    return _emit(av @ bv, (a, b), lambda g: (g @ bv.T, av.T @ g))


def linear(x, weight, bias):
    """x @ weight + bias, with bias of shape (out,) added to every row."""
    if x.values.ndim != 2 or x.shape[1] != weight.shape[0]:
        raise DimensionError(f"linear: cannot multiply {x.shape} by {weight.shape}")
    if bias.shape != (weight.shape[1],):
        raise DimensionError(f"linear: bias {bias.shape} does not match {weight.shape}")
    xv, wv = x.values, weight.values
    return _emit(xv @ wv + bias.values, (x, weight, bias),
                 lambda g: (g @ wv.T, xv.T @ g, g.sum(axis=0)))


# --- distributions ------------------------------------------------------------

def gaussian_log_prob(x, mean_, std):
    """Diagonal Gaussian log density summed over the last axis.

    1-D inputs give a scalar. 2-D ``x``/``mean_`` of shape (B, d) give (B,);
    ``std`` may then be (d,) and is shared across rows.
    """
    x, mean_, std = _as_tensor(x), _as_tensor(mean_), _as_tensor(std)
    if x.shape != mean_.shape:
        raise DimensionError(f"gaussian_log_prob: x {x.shape} vs mean {mean_.shape}")
    if std.shape != x.shape and std.shape != x.shape[-1:]:
        raise DimensionError(f"gaussian_log_prob: std {std.shape} vs x {x.shape}")
    sv = std.values
    if np.any(sv <= 0.0):
        raise DomainError("gaussian_log_prob: std must be strictly positive")
    z = (x.values - mean_.values) / sv
    logp = -0.5 * z * z - np.log(sv) - 0.5 * LOG_2PI
    out = logp.sum(axis=-1)
    std_shape = std.shape

    def vjp(g):
        g = np.expand_dims(g, -1)
        gx = -z / sv * g
        gs = (z * z - 1.0) / sv * g
        if gs.shape != std_shape:
            gs = gs.sum(axis=0)
        return gx, -gx, gs

    return _emit(np.asarray(out), (x, mean_, std), vjp)


def tanh_log_det(u):
    """Sum over the last axis of log(1 - tanh(u)^2), in a stable form."""
    u = _as_tensor(u)
    per = mul(sub(sub(LOG_2, u), softplus(mul(u, -2.0))), 2.0)
    return sum(per, axis=-1) if u.values.ndim > 1 else sum(per)


# --- optimizer ----------------------------------------------------------------

@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    @classmethod
    def for_params(cls, params: Sequence[ParamTensor]):
        return cls(m=[np.zeros(p.shape) for p in params],
                   v=[np.zeros(p.shape) for p in params])

    def copy(self):
        return AdamState(self.beta1, self.beta2, self.eps, self.step,
                         [a.copy() for a in self.m], [a.copy() for a in self.v])


def adam_step(params, grads, state, lr):
    """One bias-corrected Adam update, applied in place to ``params``.

    ``grads`` are numpy arrays aligned with ``params``. Every block is checked
    for NaN/Inf before anything is written, so a poisoned step leaves both
    parameters and moments untouched.
    """
    if len(params) != len(grads) or len(params) != len(state.m):
        raise DimensionError("adam_step: params, grads and moments differ in length")
    for p, g, m in zip(params, grads, state.m):
        if p.shape != np.shape(g) or p.shape != m.shape:
            raise DimensionError(
                f"adam_step: block {p.name!r} has shape {p.shape}, grad {np.shape(g)}")
        if not np.all(np.isfinite(g)):
            raise PoisonedUpdateError(p.name or "<unnamed>")
    state.step += 1
    corr1 = 1.0 - state.beta1 ** state.step
    corr2 = 1.0 - state.beta2 ** state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        flat = p.values.reshape(-1)
        kernels.adam_update(flat, np.ascontiguousarray(g, dtype=np.float64).reshape(-1),
                            m.reshape(-1), v.reshape(-1), lr,
                            state.beta1, state.beta2, state.eps, corr1, corr2)
    return params, state


def clip_grad_norm(grads, max_norm):
    """Scale grads so their global L2 norm is at most max_norm. Returns the norm."""
    total = math.sqrt(float(np.sum([np.sum(g * g) for g in grads])))
    if max_norm is not None and max_norm > 0 and total > max_norm:
        scale = max_norm / (total + 1e-12)
        for g in grads:
            g *= scale
    return total
