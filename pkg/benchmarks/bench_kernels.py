"""Timing comparison of the pure numpy kernels against the compiled core.

Runs each kernel on seeded random inputs of growing size and reports
per-call wall time for both backends plus the speedup. The compiled
backend is optional; when the extension is missing only the pure
numbers are printed.

Usage: python benchmarks/bench_kernels.py [--repeats 50]
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from mddkit._kernels import pure

try:
    from mddkit._kernels import _fast as fast
except ImportError:
    fast = None


def _simplex(rng, n):
    v = rng.random(n) + 0.05
    return v / v.sum()


def _log_probs(rng, n, k):
    z = rng.normal(size=(n, k))
    z -= z.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def _bench(fn, repeats):
    timer = timeit.Timer(fn)
    number = max(1, timer.autorange()[0] // 4)
    best = min(timer.repeat(repeat=repeats, number=number))
    return best / number


def _row(name, pure_s, fast_s):
    if fast_s is None:
        print(f"{name:<34} {pure_s * 1e3:>10.3f} ms {'-':>12} {'-':>9}")
    else:
        print(f"{name:<34} {pure_s * 1e3:>10.3f} ms {fast_s * 1e3:>9.3f} ms "
              f"{pure_s / fast_s:>8.1f}x")


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=20,
                        help="timing repeats per case")
    args = parser.parse_args()

    rng = np.random.default_rng(0)
    print(f"{'kernel':<34} {'pure':>13} {'fast':>12} {'speedup':>9}")

    for n, m, k in ((50, 8, 20), (200, 20, 40), (800, 40, 60)):
        logp = _log_probs(rng, n, k)
        targets = rng.integers(1, k, size=m)
        fn_pure = lambda: pure.ctc_forward_backward(logp, targets, 0)
        fn_fast = (lambda: fast.ctc_forward_backward(logp, targets, 0)) if fast else None
        _row(f"ctc_forward_backward n={n} m={m}",
             _bench(fn_pure, args.repeats),
             _bench(fn_fast, args.repeats) if fn_fast else None)

    for n, m in ((50, 8), (400, 40), (2000, 100)):
        a = _simplex(rng, n)
        b = _simplex(rng, m)
        fn_pure = lambda: pure.nw_coupling(a, b)
        fn_fast = (lambda: fast.nw_coupling(a, b)) if fast else None
        _row(f"nw_coupling n={n} m={m}",
             _bench(fn_pure, args.repeats),
             _bench(fn_fast, args.repeats) if fn_fast else None)

    for n in (50, 400, 2000):
        prev = np.full(n + 1, -np.inf)
        prev[0] = 0.0
        logcol = rng.normal(size=n)
        fn_pure = lambda: pure.seg_dp_extend(prev, logcol)
        fn_fast = (lambda: fast.seg_dp_extend(prev, logcol)) if fast else None
        _row(f"seg_dp_extend n={n}",
             _bench(fn_pure, args.repeats),
             _bench(fn_fast, args.repeats) if fn_fast else None)

    if fast is None:
        print("\ncompiled backend not built; install with the extension "
              "to compare")


if __name__ == "__main__":
    main()
