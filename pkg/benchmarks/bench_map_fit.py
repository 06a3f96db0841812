"""Benchmark the preference-fitting kernels: active backend vs pure numpy.

Run without flags to compare the numba path against the numpy fallback;
with VQCMP_DISABLE_NUMBA=1 both columns are the numpy path (sanity run).

    python benchmarks/bench_map_fit.py [--sizes 50,200,800,2000] [--repeats 5]
"""

import argparse
import time

import numpy as np

from vqcmp import _kernels
from vqcmp.prefagg import PreferenceMatrix, fit_map_scores


def synthetic_counts(n: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    # sparse uneven schedule: roughly 8 comparisons per item
    a = np.zeros((n, n), dtype=np.float64)
    n_pairs = 4 * n
    i = rng.integers(0, n, size=n_pairs)
    j = rng.integers(0, n, size=n_pairs)
    keep = i != j
    wins = rng.integers(1, 10, size=n_pairs)
    np.add.at(a, (i[keep], j[keep]), wins[keep])
    return a


def time_call(fn, repeats: int) -> float:
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--sizes", default="50,200,800,2000")
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()
    sizes = [int(s) for s in args.sizes.split(",")]

    np_logpost, np_hessian = _kernels.numpy_kernels()
    active = _kernels.backend_name()
    print(f"active backend: {active}")
    if active == "numpy":
        print("note: numba unavailable or disabled; both columns are the numpy path")

    # warm up the JIT outside the timed region
    warm_a = synthetic_counts(8, seed=0)
    warm_s = np.zeros(8)
    _kernels.logpost_grad(warm_s, warm_a, 0.1)
    _kernels.hessian(warm_s, warm_a, 0.1)

    header = f"{'n':>6} {'kernel':>12} {'numpy (ms)':>12} {active + ' (ms)':>12} {'speedup':>8}"
    print(header)
    print("-" * len(header))
    for n in sizes:
        a = synthetic_counts(n, seed=1)
        s = np.random.default_rng(2).normal(scale=0.5, size=n)
        for label, active_fn, numpy_fn in (
            ("grad", lambda: _kernels.logpost_grad(s, a, 0.1), lambda: np_logpost(s, a, 0.1)),
            ("hessian", lambda: _kernels.hessian(s, a, 0.1), lambda: np_hessian(s, a, 0.1)),
        ):
            t_numpy = time_call(numpy_fn, args.repeats)
            t_active = time_call(active_fn, args.repeats)
            print(
                f"{n:>6} {label:>12} {t_numpy * 1e3:>12.3f} {t_active * 1e3:>12.3f} "
                f"{t_numpy / t_active:>8.2f}x"
            )

    n_fit = sizes[len(sizes) // 2]
    matrix = PreferenceMatrix(
        items=tuple(f"i{k}" for k in range(n_fit)),
        c=synthetic_counts(n_fit, seed=3).astype(np.int64),
        t=np.zeros((n_fit, n_fit), dtype=np.int64),
    )
    start = time.perf_counter()
    scores = fit_map_scores(matrix, prior_variance=10.0)
    elapsed = time.perf_counter() - start
    print(
        f"\nfull fit: n={n_fit} converged in {elapsed * 1e3:.1f} ms "
        f"(score range {scores.scores.min():+.3f} .. {scores.scores.max():+.3f})"
    )


if __name__ == "__main__":
    main()
