"""Compare the compiled kernels with the NumPy fallback.

Run with ``python benchmarks/bench_kernels.py [--repeat N]``.  Prints one line
per kernel and size: median time for each backend, the speedup and the max
absolute difference between the two outputs.
"""
import argparse
import statistics
import timeit

import numpy as np

from fragforge import _pykernels as py

try:
    from fragforge import _ckernels as cy
except ImportError:
    cy = None


def cases(rng, n):
    pos = rng.normal(scale=n ** (1 / 3) * 1.2, size=(n, 3))
    radii = rng.choice([0.31, 0.76, 0.71, 0.66], size=n)
    values = rng.normal(size=(8 * n, 64))
    index = rng.integers(0, n, size=8 * n).astype(np.int64)
    other = pos[: n // 2] + 3.0
    return {
        "pairwise_distances": (pos,),
        "radius_pairs": (pos, 5.0),
        "segment_sum": (values, index, n),
        "surrogate_terms": (pos, radii, 1.3, 100.0, 0.1, 0.9, 1.5),
        "min_cross_distance": (pos, other),
    }


def flat(out):
    if isinstance(out, tuple):
        return np.concatenate([np.ravel(np.asarray(o, dtype=float)) for o in out])
    return np.ravel(np.asarray(out, dtype=float))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=7)
    ap.add_argument("--sizes", type=int, nargs="+", default=[16, 64, 256])
    args = ap.parse_args()
    if cy is None:
        print("compiled extension not built; only the fallback is available")
    rng = np.random.default_rng(0)
    print(f"{'kernel':<20} {'atoms':>6} {'numpy ms':>10} {'cython ms':>10} {'speedup':>8} {'max diff':>10}")
    for n in args.sizes:
        for name, a in cases(rng, n).items():
            fp = getattr(py, name)
            t_py = statistics.median(timeit.repeat(lambda: fp(*a), number=20, repeat=args.repeat)) / 20
            if cy is None:
                print(f"{name:<20} {n:>6} {t_py * 1e3:>10.4f} {'-':>10} {'-':>8} {'-':>10}")
                continue
            fc = getattr(cy, name)
            t_cy = statistics.median(timeit.repeat(lambda: fc(*a), number=20, repeat=args.repeat)) / 20
            diff = np.max(np.abs(flat(fp(*a)) - flat(fc(*a))), initial=0.0)
            print(f"{name:<20} {n:>6} {t_py * 1e3:>10.4f} {t_cy * 1e3:>10.4f} {t_py / t_cy:>8.1f} {diff:>10.2e}")


if __name__ == "__main__":
    main()
