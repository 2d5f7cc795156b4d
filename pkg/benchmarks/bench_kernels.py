"""Time the numba and pure-numpy kernels on realistic shapes.

Both paths are imported in one process by calling the private
implementations directly, so the comparison does not depend on the
MORPHCONN_DISABLE_NUMBA flag. The first numba call (compile or cache
load) is excluded.

    python benchmarks/bench_kernels.py [--repeat 5] [--subjects 300]
"""
import argparse
import time

import numpy as np

from morphconn import _accel, kernels
from morphconn.forest import ForestParams, train_forest


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--subjects", type=int, default=300)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    if not _accel.NUMBA_INSTALLED:
        raise SystemExit("numba is not installed; nothing to compare")

    rng = np.random.default_rng(args.seed)
    n = args.subjects
    z = rng.normal(size=(n, 148, 4))
    pi, pj = kernels._pair_index(148)
    X = rng.normal(size=(n, 400))
    y = rng.integers(0, 2, n).astype(np.int64)
    feats = np.arange(0, 400, 20, dtype=np.int64)
    t = rng.uniform(-6, 6, 10_878)
    df = rng.uniform(2, n, 10_878)
    x, xc = df / (df + t * t), t * t / (df + t * t)
    a, b = df / 2, np.full_like(df, 0.5)

    cases = [
        (f"MCF distances ({n} x 148 -> 10878)",
         lambda: kernels._mcf_numba(z, pi, pj), lambda: kernels._mcf_numpy(z, pi, pj)),
        (f"split search ({n} rows, 20 features)",
         lambda: kernels._best_split_numba(X, y, feats, 1),
         lambda: kernels._best_split_numpy(X, y, feats, 1)),
        ("incomplete beta (10878 p-values)",
         lambda: kernels._betainc_numba(a, b, x, xc), lambda: kernels._betainc_numpy(a, b, x, xc)),
    ]
    print(f"{'kernel':<40} {'numba':>10} {'numpy':>10} {'speedup':>8}")
    for name, fast, slow in cases:
        fast()  # compile / cache load
        tn, tp = best_of(fast, args.repeat), best_of(slow, args.repeat)
        print(f"{name:<40} {tn * 1e3:>8.2f}ms {tp * 1e3:>8.2f}ms {tp / tn:>7.1f}x")

    # whole forest, through the public dispatcher of the active path
    Xf = X[:, :24]
    t0 = time.perf_counter()
    train_forest(Xf, y, ForestParams(n_trees=100, seed=args.seed))
    label = "numba" if _accel.USE_NUMBA else "numpy"
    print(f"100-tree forest ({n} x 24) on the active {label} path: "
          f"{time.perf_counter() - t0:.2f}s")


if __name__ == "__main__":
    main()
