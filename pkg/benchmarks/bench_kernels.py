"""Time the compiled kernels against the NumPy fallback.

    python benchmarks/bench_kernels.py [--repeat 5]

Prints one row per kernel with the best-of-N wall time of each backend.
"""

import argparse
import timeit

import numpy as np

from grasplab import kernels


def cases(rng):
    x = rng.uniform(size=(32, 8, 28, 28))
    cols = kernels.get_backend("python").im2col(x, 3, 3, 1, 1)
    pos, neg = rng.normal(size=4000), rng.normal(size=4000)
    bp = np.linspace(0.0, 1.0, 25)
    vals = rng.uniform(size=25)
    x0 = rng.uniform(size=1000)
    return {
        "im2col 32x8x28x28 k3": lambda b: b.im2col(x, 3, 3, 1, 1),
        "col2im 32x8x28x28 k3": lambda b: b.col2im(cols, x.shape, 3, 3, 1, 1),
        "auc_pair_counts 4000x4000": lambda b: b.auc_pair_counts(pos, neg),
        "pwl_descent 1000 inits x 1000 steps": lambda b: b.pwl_descent(bp, vals, x0, 1000, 0.001),
    }


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    backends = {"python": kernels.get_backend("python")}
    try:
        backends["cython"] = kernels.get_backend("cython")
    except ImportError:
        print("compiled extension not built; timing the fallback only")
    print(f"active backend: {kernels.BACKEND}")
    print(f"{'kernel':40s}" + "".join(f"{n:>12s}" for n in backends) + "   speedup")
    for name, fn in cases(np.random.default_rng(0)).items():
        times = {n: min(timeit.repeat(lambda: fn(b), number=1, repeat=args.repeat)) for n, b in backends.items()}
        speed = times["python"] / times["cython"] if "cython" in times else float("nan")
        print(f"{name:40s}" + "".join(f"{t * 1e3:10.2f}ms" for t in times.values()) + f"   {speed:6.1f}x")


if __name__ == "__main__":
    main()
