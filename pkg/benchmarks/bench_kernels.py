"""Times the compiled tree kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat N]

Inputs mimic one client round: 320 rows of six prediction columns over five
classes, 25 trees of depth 6, 50 attribution samples sharing one background.
"""

import argparse
import time

import numpy as np

from fedmfs import kernels
from fedmfs.models import concat_trees


def make_inputs(seed=0, n=320, cols=6, classes=5):
    rng = np.random.default_rng(seed)
    y = rng.integers(0, classes, n).astype(np.int32)
    X = rng.integers(0, classes, (n, cols)).astype(np.int32)
    # a few columns agree with the label most of the time
    for j in (2, 5):
        keep = rng.random(n) < 0.8
        X[keep, j] = y[keep]
    return X, y


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--trees", type=int, default=25)
    args = ap.parse_args()

    if kernels.compiled_backend is None:
        print("compiled backend not built; only the numpy timings are meaningful")
    X, y = make_inputs()
    classes = 5
    rng = np.random.default_rng(1)
    boots = [rng.integers(0, len(X), len(X)) for _ in range(args.trees)]
    forest = concat_trees([kernels.python_backend.grow_tree(X[b], y[b], classes, 6) for b in boots])
    arrays = forest.arrays()
    sub = X[:50]

    jobs = {
        "grow_tree x%d" % args.trees: lambda impl: [impl.grow_tree(X[b], y[b], classes, 6) for b in boots],
        "forest_votes": lambda impl: impl.forest_votes(*arrays, X, classes),
        "masked_label_votes": lambda impl: impl.masked_label_votes(*arrays, sub, y[:50], sub),
    }
    backends = [("numpy", kernels.python_backend)]
    if kernels.compiled_backend is not None:
        backends.append(("cython", kernels.compiled_backend))

    print(f"{'kernel':<22}" + "".join(f"{name:>12}" for name, _ in backends) + f"{'speedup':>10}")
    for label, job in jobs.items():
        secs = [best_of(lambda: job(impl), args.repeat) for _, impl in backends]
        speed = f"{secs[0] / secs[1]:9.1f}x" if len(secs) == 2 else ""
        print(f"{label:<22}" + "".join(f"{s * 1e3:10.2f}ms" for s in secs) + f"{speed:>10}")


if __name__ == "__main__":
    main()
