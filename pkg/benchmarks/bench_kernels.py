"""Timing comparison of the embedded-matvec backends.

Runs `y += embed(A) @ x` through the compiled kernel and the numpy
fallback on representative support shapes, then (optionally) times an
iterative-vs-dense eigensolve of a mid-size chain.  Usage:

    python3 benchmarks/bench_kernels.py [--n 14] [--repeats 7] [--eigsh]
"""

import argparse
import statistics
import time

import numpy as np

from lpplab.kernels import BACKEND, EmbeddingPlan, apply_embedded


def _time(fn, repeats):
    samples = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        samples.append(time.perf_counter() - t0)
    return statistics.median(samples)


def bench_kernels(n, repeats, rng):
    dims = (2,) * n
    dim = 2 ** n
    x = rng.standard_normal(dim) + 1j * rng.standard_normal(dim)
    print(f"{'support':>12} {'m':>4} {'compiled':>12} {'numpy':>12} {'ratio':>7}")
    for label, positions in (
        ("1 site", (0,)),
        ("pair (0,1)", (0, 1)),
        ("pair (0,n/2)", (0, n // 2)),
        ("3 sites", (0, n // 2, n - 1)),
    ):
        plan = EmbeddingPlan(dims, positions)
        A = rng.standard_normal((plan.m, plan.m)) + 1j * rng.standard_normal(
            (plan.m, plan.m)
        )
        y = np.zeros(dim, dtype=np.complex128)
        times = {}
        for backend in ("compiled", "numpy"):
            try:
                t = _time(
                    lambda: apply_embedded(A, plan, x, y=y, backend=backend), repeats
                )
            except AttributeError:
                t = float("nan")  # extension not built
            times[backend] = t
        ratio = times["numpy"] / times["compiled"]
        print(
            f"{label:>12} {plan.m:>4} {times['compiled'] * 1e3:>10.3f}ms "
            f"{times['numpy'] * 1e3:>10.3f}ms {ratio:>6.2f}x"
        )


def bench_eigsh(n):
    from lpplab import models

    model, _ = models.build_gapped_chain("transverse-field-Ising", {"n": n})
    for mode in ("iterative", "dense"):
        t0 = time.perf_counter()
        S = model.spectral(mode=mode, k=4)
        dt = time.perf_counter() - t0
        print(f"{mode:>10}: {dt:7.2f}s  E0 = {S.values[0]:.12f}")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=14, help="number of spins")
    ap.add_argument("--repeats", type=int, default=7)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--eigsh", action="store_true", help="also time the eigensolvers")
    args = ap.parse_args()

    print(f"active backend: {BACKEND}")
    bench_kernels(args.n, args.repeats, np.random.default_rng(args.seed))
    if args.eigsh:
        bench_eigsh(args.n)


if __name__ == "__main__":
    main()
