"""Kernel backend selection.

The compiled extension is used when it was built; otherwise the numpy
fallback is imported. Set ``PBRL_PURE_PYTHON=1`` to force the fallback.
"""
import os

from . import _kernels_py

if os.environ.get("PBRL_PURE_PYTHON", "") not in ("", "0"):
    _impl = _kernels_py
else:
    try:
        from . import _kernels_ext as _impl
    except ImportError:  # extension not built
        _impl = _kernels_py

BACKEND = _impl.BACKEND
gae = _impl.gae
nstep_returns = _impl.nstep_returns
adam_update = _impl.adam_update
wrap_angle = _impl.wrap_angle
pendulum_dynamics = _impl.pendulum_dynamics

__all__ = [
    "BACKEND",
    "gae",
    "nstep_returns",
    "adam_update",
    "wrap_angle",
    "pendulum_dynamics",
]
