"""Time the compiled kernels against the NumPy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5]
"""
import argparse
import math
import timeit

import numpy as np

from tailbench import _backend


def _sgd_case(rng):
    n, d, R, K, B = 2000, 200, 50, 200, 1
    A = rng.uniform(size=(n, d))
    b = rng.standard_normal(n)
    X = rng.standard_normal((R, d)) * 0.01
    idx = rng.integers(0, n, size=(R, K, B)).astype(np.int64)
    return lambda fn: fn(A, b, X.copy(), idx, 0.015 / d, 0.0, math.inf)


def _em_case(rng, coupled):
    N, d, steps = 2000, 3, 500
    th, mu, a = np.array([1.0, 0.5, 0.25]), np.array([0.2, -0.1, 0.0]), np.array([0.1, 0.1, 0.1])
    Z = rng.standard_normal((N, d))
    dW = rng.standard_normal((steps, N, d))
    return lambda fn: fn(Z.copy(), dW, th, mu, a, 0.01, coupled)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    rng = np.random.default_rng(0)
    cases = {"sgd_block": _sgd_case(rng), "em_steps coupled": _em_case(rng, True),
             "em_steps decoupled": _em_case(rng, False)}
    have_cython = True
    try:
        _backend.get("sgd_block", "cython")
    except ImportError:
        have_cython = False
    print(f"{'kernel':20s} {'python [s]':>11s} {'cython [s]':>11s} {'speedup':>8s}")
    for name, case in cases.items():
        kern = name.split()[0]
        py = min(timeit.repeat(lambda: case(_backend.get(kern, "python")), number=1,
                               repeat=args.repeat))
        if have_cython:
            cy = min(timeit.repeat(lambda: case(_backend.get(kern, "cython")), number=1,
                                   repeat=args.repeat))
            print(f"{name:20s} {py:11.4f} {cy:11.4f} {py / cy:7.1f}x")
        else:
            print(f"{name:20s} {py:11.4f} {'n/a':>11s} {'':>8s}")


if __name__ == "__main__":
    main()
