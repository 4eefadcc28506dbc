"""Time the numba kernels against their numpy fallbacks.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Both variants are compiled/imported side by side, so the environment flag
does not matter here. The first numba call (compilation or cache load) is
excluded from the timings.
"""

import argparse
import math
import time

import numpy as np

from ubot import kernels


def best_of(fn, repeat):
    fn()
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def cases(gen):
    X = gen.standard_normal((256, 2))
    Y = gen.standard_normal((256, 2)) + 0.5
    yield "sqeuclidean 256x256", lambda k: (lambda: k["sqeuclidean"](X, Y))

    for n, eps, rho in ((64, 0.1, 1.0 / 1.1), (64, 0.1, 1.0), (256, 0.05, 1.0 / 1.05)):
        C = kernels.sqeuclidean_np(gen.standard_normal((n, 2)), gen.standard_normal((n, 2)))
        la = np.full(n, -math.log(n))
        z = np.zeros(n)
        mode = "balanced" if rho == 1.0 else "unbalanced"
        yield (f"sinkhorn {n}x{n} eps={eps} {mode}",
               lambda k, C=C, la=la, z=z, eps=eps, rho=rho: (lambda: k["sinkhorn"](la, la, C, eps, rho, 500, 1e-30, z, z)))

    for n in (8, 64):
        C = gen.uniform(size=(n, n))
        yield f"hungarian {n}x{n}", lambda k, C=C: (lambda: k["hungarian"](C))

    n = 8
    C = kernels.sqeuclidean_np(gen.standard_normal((n, 2)), gen.standard_normal((n, 2)))
    a = np.full(n, 1.0 / n)
    L0 = np.log(np.outer(a, a)) - C / 2.0
    yield "mirror descent 8x8 tau=1", lambda k: (lambda: k["uot_mirror_descent"](a, a, C, 1.0, 0.0, 2000, 1e-30, L0))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    impls = {
        "numba": {name: getattr(kernels, name + "_nb") for name in ("sqeuclidean", "sinkhorn", "hungarian", "uot_mirror_descent")},
        "numpy": {name: getattr(kernels, name + "_np") for name in ("sqeuclidean", "sinkhorn", "hungarian", "uot_mirror_descent")},
    }
    print(f"{'kernel':<38}{'numba [ms]':>12}{'numpy [ms]':>12}{'speedup':>10}")
    for label, make in cases(np.random.default_rng(args.seed)):
        t_nb = best_of(make(impls["numba"]), args.repeat)
        t_np = best_of(make(impls["numpy"]), args.repeat)
        print(f"{label:<38}{1e3 * t_nb:>12.3f}{1e3 * t_np:>12.3f}{t_np / t_nb:>9.1f}x")


if __name__ == "__main__":
    main()
