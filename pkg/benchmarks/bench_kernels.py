"""Benchmark the numba kernels against the pure-numpy fallback.

Times the three hot paths on representative workloads: residual
evaluation, normal-equation accumulation, and the integer ambiguity
search. Run from the repo root:

    python3 benchmarks/bench_kernels.py [--factors 5000] [--repeats 50]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from gnssfgo import kernels
from gnssfgo.ambiguity import _ldl_lower


def time_call(fn, *args, repeats):
    fn(*args)  # warm (JIT) call, excluded from timing
    t0 = time.perf_counter()
    for _ in range(repeats):
        fn(*args)
    return (time.perf_counter() - t0) / repeats


def bench_accumulation(impl, n_factors, n_cols, repeats):
    rng = np.random.default_rng(0)
    ja = rng.normal(size=(n_factors, 1, 3))
    jb = rng.normal(size=(n_factors, 1, 2))
    ca = rng.integers(0, n_cols - 3, size=n_factors).astype(np.int64)
    cb = rng.integers(0, n_cols - 2, size=n_factors).astype(np.int64)
    w = rng.uniform(0.1, 1.0, size=n_factors)
    hmat = np.zeros((n_cols, n_cols))

    def run():
        hmat.fill(0.0)
        impl["block_pair_accumulate"](hmat, ja, ja, ca, ca, w)
        impl["block_pair_accumulate"](hmat, ja, jb, ca, cb, w)
        impl["block_pair_accumulate"](hmat, jb, ja, cb, ca, w)
        impl["block_pair_accumulate"](hmat, jb, jb, cb, cb, w)

    return time_call(run, repeats=repeats)


def bench_residual(impl, n_factors, n_cols, repeats):
    rng = np.random.default_rng(1)
    jac = rng.normal(size=(n_factors, 1, 3))
    cols = rng.integers(0, n_cols - 3, size=n_factors).astype(np.int64)
    x = rng.normal(size=n_cols)
    base = rng.normal(size=(n_factors, 1))

    def run():
        ew = base.copy()
        impl["block_residual_add"](ew, jac, cols, x)

    return time_call(run, repeats=repeats)


def bench_search(impl, dim, repeats):
    rng = np.random.default_rng(2)
    a = rng.normal(size=(dim, dim))
    q = a @ a.T + 0.05 * np.eye(dim)
    lmat, d = _ldl_lower(q)
    zhat = np.ascontiguousarray(rng.normal(scale=2.0, size=dim))
    lmat = np.ascontiguousarray(lmat)

    def run():
        impl["ils_search"](zhat, lmat, d, 6)

    return time_call(run, repeats=repeats)


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--factors", type=int, default=5000, help="factors per accumulation pass")
    parser.add_argument("--cols", type=int, default=1000, help="columns in the normal equations")
    parser.add_argument("--search-dim", type=int, default=12, help="ambiguity search dimension")
    parser.add_argument("--repeats", type=int, default=50)
    args = parser.parse_args()

    impls = kernels.implementations()
    if "numba" not in impls:
        print("numba unavailable; benchmarking numpy only")

    rows = []
    for name, impl in sorted(impls.items()):
        rows.append(
            (
                name,
                bench_residual(impl, args.factors, args.cols, args.repeats),
                bench_accumulation(impl, args.factors, args.cols, args.repeats),
                bench_search(impl, args.search_dim, args.repeats),
            )
        )

    print(f"\nworkload: {args.factors} factors, {args.cols} columns, "
          f"search dim {args.search_dim}, {args.repeats} repeats (warm)")
    print(f"{'backend':<8} {'residual':>12} {'normal eqs':>12} {'ils search':>12}")
    for name, t_res, t_acc, t_search in rows:
        print(f"{name:<8} {t_res*1e3:>10.3f}ms {t_acc*1e3:>10.3f}ms {t_search*1e3:>10.3f}ms")
    if len(rows) == 2:
        by = {r[0]: r for r in rows}
        print(
            f"{'speedup':<8} "
            f"{by['numpy'][1] / by['numba'][1]:>11.1f}x "
            f"{by['numpy'][2] / by['numba'][2]:>11.1f}x "
            f"{by['numpy'][3] / by['numba'][3]:>11.1f}x"
        )


if __name__ == "__main__":
    main()
