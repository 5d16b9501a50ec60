"""Compare the compiled kernels with the NumPy fallback.

Usage: python3 benchmarks/bench_kernels.py [--repeat 5]

Each row reports the best wall time over the repeats for both backends and
the speedup. The end-to-end row solves a sign-enlargement causal transport
LP with the simplex routed through each backend in turn.
"""
import argparse
import time

import numpy as np

from causalot import kernels, simplex
from causalot.causal_lp import solve_causal
from causalot.costs import CostSpec
from causalot.pathspace import AtomLabeling, build_binomial, enlarge_initial, natural_filtration, sign_labels


def best_of(fn, repeat):
    fn()  # warm up caches and lazy imports
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def sparse_columns(rng, m, n, per_col=4):
    rowind = np.concatenate([rng.choice(m, per_col, replace=False) for _ in range(n)]).astype(np.int64)
    colptr = np.arange(0, per_col * (n + 1), per_col, dtype=np.int64)
    return colptr, rowind, rng.normal(size=per_col * n)


def cases(rng):
    m, n = 400, 20000
    colptr, rowind, vals = sparse_columns(rng, m, n)
    c = rng.normal(size=n)
    y = rng.normal(size=m)
    elig = np.ones(n, dtype=np.uint8)
    yield "price (20000 cols)", lambda k: k.price(colptr, rowind, vals, c, y, elig, 0, n, 1e-9, False)

    xb = np.abs(rng.normal(size=m))
    d = rng.normal(size=m)
    basis = rng.permutation(m).astype(np.int64)
    yield "ratio_test (m=400)", lambda k: [k.ratio_test(xb, d, basis, 1e-9, False) for _ in range(50)]

    binv = np.eye(m)
    dd = rng.normal(size=m)
    dd[7] = 3.0
    yield "eta_update (m=400)", lambda k: k.eta_update(binv.copy(), dd, 7)

    paths, grid = 2000, 200
    dt = 1.0 / grid
    dB = np.ascontiguousarray(rng.standard_normal((paths, grid)) * np.sqrt(dt))
    pool = np.ascontiguousarray(rng.standard_normal((paths, 256)))
    yield "bessel_paths (2000 x 200)", lambda k: k.bessel_paths(0.1, dt, dB, pool)


def end_to_end(N):
    tree = build_binomial(N, 1.0)
    F = natural_filtration(tree)
    G = enlarge_initial(F, AtomLabeling.from_labels(sign_labels(tree), tree.leaf_prob))
    return lambda: solve_causal(tree, F, tree, G, CostSpec("cm"), formulation="pairs")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--N", type=int, default=5, help="steps for the end-to-end LP")
    args = ap.parse_args()
    try:
        compiled = kernels.backend_module("cython")
    except ImportError:
        raise SystemExit("compiled kernels are not built; run pip install -e . first")
    py = kernels.backend_module("python")
    rng = np.random.default_rng(0)

    print(f"{'kernel':32s} {'cython s':>10s} {'python s':>10s} {'speedup':>8s}")
    for name, fn in cases(rng):
        tc = best_of(lambda: fn(compiled), args.repeat)
        tp = best_of(lambda: fn(py), args.repeat)
        print(f"{name:32s} {tc:10.5f} {tp:10.5f} {tp / tc:8.1f}")

    row = {}
    for backend in ("cython", "python"):
        saved = simplex.kernels
        simplex.kernels = kernels.backend_module(backend)
        try:
            row[backend] = best_of(end_to_end(args.N), 2)
        finally:
            simplex.kernels = saved
    name = f"causal LP end to end (N={args.N})"
    print(f"{name:32s} {row['cython']:10.5f} {row['python']:10.5f} {row['python'] / row['cython']:8.1f}")


if __name__ == "__main__":
    main()
