"""Time the numba kernels against their numpy fallbacks.

Usage: ``python benchmarks/bench_kernels.py [--repeat R]``. The first call
of each numba kernel compiles it and is excluded from timing.
"""

import argparse
import timeit

import numpy as np

from deeplcc import kernels as k
from deeplcc.traffic import TABLE_HETEROGENEOUS, MixedConfig


def cases():
    rng = np.random.default_rng(0)
    cfg = MixedConfig(8, (3, 6), TABLE_HETEROGENEOUS)
    params = cfg.param_arrays()
    s = 20 + rng.uniform(-3, 3, 8)
    v = 15 + rng.uniform(-2, 2, 8)
    K = 800
    head = 15 + rng.uniform(-1, 1, K + 1)
    off = rng.uniform(-1, 1, (K, 8))
    noise = rng.uniform(-0.1, 0.1, (K, 8))
    sig = rng.standard_normal((800, 10))
    fv = rng.uniform(0, 30, 6400)
    fa = rng.uniform(-5, 2, 6400)
    step_args = (s, v, 15.0, off[0], noise[0], cfg.is_cav, *params, -5.0,
                 2.0, 0.05)
    roll_args = (s, v, head, True, off, noise, cfg.is_cav, *params, -5.0,
                 2.0, 0.05)
    return [
        ("platoon_step (n=8)", k.platoon_step_numba, k.platoon_step_numpy,
         step_args),
        ("rollout (n=8, K=800)", k.rollout_numba, k.rollout_numpy, roll_args),
        ("hankel (800x10, L=70)", k.hankel_matrix_numba, k.hankel_matrix_numpy,
         (sig, 70)),
        ("fuel_rate (6400)", k.fuel_rate_numba, k.fuel_rate_numpy, (fv, fa)),
    ]


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    print(f"{'kernel':<24}{'numba [us]':>12}{'numpy [us]':>12}{'speedup':>9}")
    for name, fast, slow, a in cases():
        fast(*a)
        res = []
        for fn in (fast, slow):
            n, _ = timeit.Timer(lambda: fn(*a)).autorange()
            best = min(timeit.repeat(lambda: fn(*a), number=n,
                                     repeat=args.repeat)) / n
            res.append(best * 1e6)
        print(f"{name:<24}{res[0]:>12.1f}{res[1]:>12.1f}{res[1] / res[0]:>8.1f}x")


if __name__ == "__main__":
    main()
