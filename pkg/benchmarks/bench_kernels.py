"""Compiled kernel vs pure-Python fallback on the hot dynamics paths.

    python benchmarks/bench_kernels.py [--links 3] [--N 50] [--repeat 5]
"""

import argparse
import timeit

import numpy as np

from hiertraj import backend
from hiertraj.dynamics import FD_STEP, ArmModel


def _cases(model, N, rng):
    nl = model.link_count
    x_s = np.concatenate([rng.uniform(-np.pi, np.pi, nl), rng.normal(0, 0.5, nl)])
    U = np.ascontiguousarray(rng.normal(0, 2.0, (N, nl)))
    xs = np.ascontiguousarray(np.tile(x_s, (N, 1)))
    p, g, dt = model.params, model.gravity, 0.02
    return {
        "step (euler)": lambda impl: impl.step(p, g, x_s, U[0], dt, 0),
        "step (rk4)": lambda impl: impl.step(p, g, x_s, U[0], dt, 1),
        f"rollout N={N}": lambda impl: impl.rollout(p, g, x_s, U, dt),
        f"linearize N={N}": lambda impl: impl.linearize(p, g, xs, U, dt, FD_STEP),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--links", type=int, default=3)
    ap.add_argument("--N", type=int, default=50)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)

    impls = {"python": backend.fallback}
    try:
        from hiertraj import _kernel
        impls["compiled"] = _kernel
    except ImportError:
        print("compiled kernel not built; timing the fallback only")

    model = ArmModel.uniform(args.links)
    cases = _cases(model, args.N, np.random.default_rng(0))
    print(f"{'case':<20}" + "".join(f"{k:>14}" for k in impls) + f"{'speedup':>10}")
    for name, fn in cases.items():
        times = {}
        for key, impl in impls.items():
            t = timeit.Timer(lambda: fn(impl))
            n, _ = t.autorange()
            times[key] = min(t.repeat(args.repeat, n)) / n
        row = f"{name:<20}" + "".join(f"{times[k] * 1e6:>12.1f}us" for k in impls)
        if "compiled" in times:
            row += f"{times['python'] / times['compiled']:>9.0f}x"
        print(row)


if __name__ == "__main__":
    main()
