"""Numba vs numpy for the basis-triple identity kernels.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Both backends are timed on the same inputs in one process; the numba path
needs numba installed and CSTARBIMOD_DISABLE_NUMBA unset.
"""
import argparse
from timeit import repeat

import numpy as np

from cstarbimod import _kernels
from cstarbimod.generators import gen_fibered, gen_random_imprimitivity
from cstarbimod import make_algebra


def fibered_case(n, fat, seed=0):
    rng = np.random.default_rng(seed)
    A = make_algebra([f"a{i}" for i in range(n)])
    B = make_algebra([f"b{i}" for i in range(n)])
    dims = rng.integers(0, fat + 1, (n, n))
    return gen_fibered(A, B, dims, metric_spread=10.0, rng=rng)


def time_call(fn, args, number, rep):
    fn(*args)  # warm-up (numba compiles here)
    return min(repeat(lambda: fn(*args), number=number, repeat=rep)) / number


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if not _kernels.HAVE_NUMBA:
        print("numba unavailable or disabled: timing the numpy path only")

    print(f"{'kernel':<10} {'size':>6} {'numpy [ms]':>11} {'numba [ms]':>11} {'speedup':>8}")
    for n, fat in ((4, 2), (6, 2), (8, 2), (10, 2)):
        M = fibered_case(n, fat)
        a = (M.gram, M.rows, M.cols)
        t_np = time_call(_kernels.fibered_identity_residual_numpy, a, 3, args.repeat)
        row = f"{'fibered':<10} {M.dim:>6} {1e3 * t_np:>11.3f}"
        if _kernels.HAVE_NUMBA:
            t_nb = time_call(_kernels.fibered_identity_residual, a, 3, args.repeat)
            r_np = _kernels.fibered_identity_residual_numpy(*a)[0]
            r_nb = _kernels.fibered_identity_residual(*a)[0]
            assert abs(r_np - r_nb) <= 1e-12 * max(1.0, r_np)
            row += f" {1e3 * t_nb:>11.3f} {t_np / t_nb:>8.1f}"
        print(row)

    for n in (4, 8, 16, 24):
        P = gen_random_imprimitivity(n, 10.0, seed=n, presented=True)
        a = (P.left_gram, P.left_idem, P.right_gram, P.right_idem)
        t_np = time_call(_kernels.presented_identity_residual_numpy, a, 1, args.repeat)
        row = f"{'presented':<10} {P.dim:>6} {1e3 * t_np:>11.3f}"
        if _kernels.HAVE_NUMBA:
            t_nb = time_call(_kernels.presented_identity_residual, a, 1, args.repeat)
            r_np = _kernels.presented_identity_residual_numpy(*a)[0]
            r_nb = _kernels.presented_identity_residual(*a)[0]
            assert abs(r_np - r_nb) <= 1e-9 * max(1.0, r_np)
            row += f" {1e3 * t_nb:>11.3f} {t_np / t_nb:>8.1f}"
        print(row)


if __name__ == "__main__":
    main()
