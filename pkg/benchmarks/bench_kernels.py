"""Time the numba kernels against their numpy twins.

    python benchmarks/bench_kernels.py [--repeat 5] [--size 1.0]

Both flavours come from ``bgpad.kernels.IMPLEMENTATIONS`` so the comparison
does not depend on ``BGPAD_DISABLE_NUMBA``.  (With the flag set, the "numba"
column times the undecorated Python loops.)
"""

import argparse
import time

import numpy as np

from bgpad import backend, kernels


def cases(scale: float, rng):
    n = int(7200 * scale)
    x = rng.poisson(30, n).astype(float)
    y = x + rng.poisson(5, n)
    yield "rolling_pearson", (x, y, 60)
    A = rng.normal(size=(int(2000 * scale), 8))
    yield "rbf_cross", (A, A, 0.125)
    yield "linear_cross", (A, A)
    m = int(1500 * scale)
    X = rng.normal(size=(m, 8))
    Q = kernels.IMPLEMENTATIONS["rbf_cross"][1](X, X, 0.125)
    alpha = np.full(m, 1.0 / m)
    yield "smo", (Q, alpha, Q @ alpha, 1 / (0.05 * m), 1e-3 / (0.05 * m), 10**7, np.zeros(0))
    yield "assign", (rng.normal(size=(int(20000 * scale), 6)), rng.normal(size=(6, 6)))


def timed(fn, args, repeat):
    best = np.inf
    for _ in range(repeat):
        fresh = tuple(a.copy() if isinstance(a, np.ndarray) else a for a in args)
        t0 = time.perf_counter()
        fn(*fresh)
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--size", type=float, default=1.0, help="problem-size multiplier")
    args = ap.parse_args()
    print(f"active backend: {backend()}")
    print(f"{'kernel':16s} {'numba [ms]':>11s} {'numpy [ms]':>11s} {'speed-up':>9s}")
    for name, inputs in cases(args.size, np.random.default_rng(0)):
        jit, np_ = kernels.IMPLEMENTATIONS[name]
        timed(jit, inputs, 1)  # compile outside the timing
        tj, tn = timed(jit, inputs, args.repeat), timed(np_, inputs, args.repeat)
        print(f"{name:16s} {1e3 * tj:11.2f} {1e3 * tn:11.2f} {tn / tj:8.1f}x")


if __name__ == "__main__":
    main()
