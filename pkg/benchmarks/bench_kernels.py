"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 50] [--json out.json]

Both backends are imported directly, so the result does not depend on
PBRL_PURE_PYTHON. Outputs are compared before timing.
"""
import argparse
import json
import timeit

import numpy as np

from pbrl import _kernels_py

try:
    from pbrl import _kernels_ext
except ImportError:
    _kernels_ext = None


def cases(rng):
    T, N = 256, 16
    rewards, dones = rng.normal(size=(T, N)), (rng.random((T, N)) < 0.02).astype(float)
    values = rng.normal(size=(T + 1, N))
    B, n = 4096, 3
    nr, nd_ = rng.normal(size=(B, n)), (rng.random((B, n)) < 0.05).astype(float)
    boot = rng.normal(size=B)
    P = 20_000
    theta, thdot, u = rng.uniform(-3, 3, 64), rng.uniform(-8, 8, 64), rng.uniform(-2, 2, 64)
    grad = rng.normal(size=P)

    def adam(k):
        param, m, v = np.zeros(P), np.zeros(P), np.zeros(P)
        return lambda: k.adam_update(param, grad, m, v, 1e-3, 0.9, 0.999, 1e-8, 0.1, 0.001)

    return {
        "gae T=256 N=16": lambda k: (lambda: k.gae(rewards, values, dones, 0.99, 0.95)),
        "nstep B=4096 n=3": lambda k: (lambda: k.nstep_returns(nr, nd_, boot, 0.99)),
        "adam P=20000": adam,
        "pendulum N=64": lambda k: (lambda: k.pendulum_dynamics(theta, thdot, u, 10.0, 1.0, 1.0,
                                                                 0.05, 8.0)),
    }


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=50)
    p.add_argument("--json", default=None, help="also write results here")
    args = p.parse_args(argv)

    rng = np.random.default_rng(0)
    backends = [("python", _kernels_py)]
    if _kernels_ext is not None:
        backends.append(("cython", _kernels_ext))
    else:
        print("compiled extension not built; timing the numpy fallback only")

    results = []
    print(f"{'kernel':<20}" + "".join(f"{name:>14}" for name, _ in backends) + "     speedup")
    for label, make in cases(rng).items():
        times = []
        outs = [make(k)() for _, k in backends]
        if len(outs) == 2 and outs[0] is not None:
            a = outs[0] if isinstance(outs[0], tuple) else (outs[0],)
            b = outs[1] if isinstance(outs[1], tuple) else (outs[1],)
            assert all(np.array_equal(x, y) for x, y in zip(a, b)), label
        for _, k in backends:
            fn = make(k)
            times.append(min(timeit.repeat(fn, number=10, repeat=args.repeat)) / 10)
        speed = times[0] / times[-1] if len(times) == 2 else 1.0
        print(f"{label:<20}" + "".join(f"{t * 1e6:>12.1f}us" for t in times) + f"{speed:>11.1f}x")
        results.append({"kernel": label, **{n: t for (n, _), t in zip(backends, times)}})
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(results, fh, indent=2)


if __name__ == "__main__":
    main()
