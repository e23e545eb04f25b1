"""Benchmark the compiled kernels against the pure-numpy fallback.

Both backends are imported directly (the dispatch in ``pvflow.kernels``
normally picks one at import time), every kernel is checked for exact
agreement on the benchmark inputs, and the median wall time of each is
reported together with the speedup.

Usage:
    python3 benchmarks/bench_kernels.py [--n 8192] [--repeats 5]
"""

import argparse
import time

import numpy as np

from pvflow import _kernels_py

try:
    from pvflow import _kernels
except ImportError:
    _kernels = None


def _time(fn, args, repeats):
    """Median wall time of fn(*args) over repeats runs, in seconds."""
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        times.append(time.perf_counter() - t0)
    return float(np.median(times))


def _cases(n, rng):
    """Benchmark cases as (name, fn_name, args) tuples."""
    k = 16
    c = 64
    pos = np.ascontiguousarray(rng.random((n, 3)))
    feats = np.ascontiguousarray(rng.standard_normal((n, c)))
    seg = np.sort(rng.integers(0, n // 8, size=n)).astype(np.int64)
    idx = np.ascontiguousarray(rng.integers(0, n, size=(n, 8)), dtype=np.int64)
    w = np.ascontiguousarray(rng.random((n, 8)))
    rows = np.ascontiguousarray(rng.standard_normal((n * k, c)))
    grad = np.ascontiguousarray(rng.standard_normal((n, c)))
    arg = np.ascontiguousarray(rng.integers(0, n * k, size=(n, c)), dtype=np.int64)
    return [
        ("knn_brute", "knn_brute", (pos, k)),
        ("segment_sum", "segment_sum", (feats, seg, n // 8)),
        ("weighted_gather", "weighted_gather", (feats, idx, w)),
        ("weighted_gather_backward", "weighted_gather_backward", (idx, w, grad, n)),
        ("group_max", "group_max", (rows, k)),
        ("group_max_backward", "group_max_backward", (arg, grad, n * k)),
    ]


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--n", type=int, default=8192, help="number of points")
    parser.add_argument("--repeats", type=int, default=5, help="runs per kernel")
    parser.add_argument("--seed", type=int, default=42, help="input seed")
    args = parser.parse_args(argv)

    if _kernels is None:
        parser.exit(1, "compiled extension not built; nothing to compare\n")

    rng = np.random.default_rng(args.seed)
    print(f"n={args.n} repeats={args.repeats}")
    print(f"{'kernel':<26} {'pure (ms)':>10} {'compiled (ms)':>14} {'speedup':>8}")
    for name, fn_name, fn_args in _cases(args.n, rng):
        fast = getattr(_kernels, fn_name)
        slow = getattr(_kernels_py, fn_name)
        out_fast = fast(*fn_args)
        out_slow = slow(*fn_args)
        for a, b in zip(np.atleast_1d(out_fast), np.atleast_1d(out_slow)):
            np.testing.assert_array_equal(a, b)
        t_slow = _time(slow, fn_args, args.repeats)
        t_fast = _time(fast, fn_args, args.repeats)
        print(
            f"{name:<26} {t_slow * 1e3:>10.2f} {t_fast * 1e3:>14.2f}"
            f" {t_slow / t_fast:>7.1f}x"
        )


if __name__ == "__main__":
    main()
