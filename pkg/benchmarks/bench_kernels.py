"""Time the compiled whitening kernel against the pure-Python fallback.

    python3 benchmarks/bench_kernels.py [--sizes 100,400,1600] [--cols 4] [--repeat 5]

Also reports the dense build-and-factorize route for reference and checks that all three
agree. Prints one row per size; milliseconds are the best of ``--repeat`` runs.
"""

import argparse
import timeit

import numpy as np

from geogic import _kernels
from geogic._kernels import _ou_py
from geogic.covariance import CovParams, cov_matrix_1d
from geogic.design import sites_1d


def best_ms(fn, repeat):
    return 1e3 * min(timeit.repeat(fn, number=1, repeat=repeat))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", default="100,400,1600,6400")
    ap.add_argument("--cols", type=int, default=4)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)

    theta = CovParams(0.5, 0.5, 1.0)
    rng = np.random.default_rng(0)
    compiled = _kernels.BACKEND == "cython"
    print(f"backend selected at import: {_kernels.BACKEND}")
    print(f"{'n':>6} {'compiled ms':>12} {'python ms':>10} {'dense ms':>9} {'speedup':>8} {'max diff':>9}")
    for n in (int(s) for s in args.sizes.split(",")):
        t = np.ascontiguousarray(sites_1d(n, 0.0).coords)
        Y = np.ascontiguousarray(rng.standard_normal((n, args.cols)))
        py = lambda: _ou_py.whiten(t, 0.5, 0.5, 1.0, Y)
        fast = (lambda: _kernels.whiten(t, 0.5, 0.5, 1.0, Y)) if compiled else py
        t_fast, t_py = best_ms(fast, args.repeat), best_ms(py, args.repeat)
        diff = np.abs(fast()[0] - py()[0]).max()
        if n <= 2000:
            sites = sites_1d(n, 0.0)
            # build, factorize and solve: the per-theta cost of the dense route
            dense = lambda: cov_matrix_1d(theta, sites).whiten(Y)
            t_dense = f"{best_ms(dense, args.repeat):9.3f}"
            diff = max(diff, np.abs(dense() - py()[0]).max())
        else:
            t_dense = f"{'-':>9}"
        print(f"{n:6d} {t_fast:12.3f} {t_py:10.3f} {t_dense} {t_py / t_fast:8.1f} {diff:9.1e}")


if __name__ == "__main__":
    main()
