"""Compare the compiled kernels with the numpy fallback.

Run with ``python3 benchmarks/bench_kernels.py``; prints one line per case.
"""

import argparse
import timeit

import numpy as np

from configlab import kernels
from configlab.counting import count_distance
from configlab.grid import GridFunction


def bench(stmt, repeat):
    return min(timeit.repeat(stmt, number=1, repeat=repeat))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    backends = ["python"] + (["compiled"] if kernels.BACKEND == "compiled" else [])

    slots = [rng.random((32, 32, 32)) for _ in range(3)]
    offs = rng.integers(-4, 5, size=(64, 3, 3))
    for b in backends:
        t = bench(lambda: kernels.shifted_product_sums(slots, offs, backend=b), args.repeat)
        print(f"shifted_product_sums  32^3 x 64 offsets  {b:9s} {t * 1e3:9.2f} ms")

    f, g = rng.random((24, 24)), rng.random((24, 24))
    for b in backends:
        t = bench(lambda: kernels.brute_correlation(f, g, backend=b), args.repeat)
        print(f"brute_correlation     24^2               {b:9s} {t * 1e3:9.2f} ms")

    F, G = GridFunction(rng.random((48, 48))), GridFunction(rng.random((48, 48)))
    for method in ("fft", "brute"):
        t = bench(lambda: count_distance(F, G, 0.25, method=method), args.repeat)
        print(f"count_distance        48^2               {method:9s} {t * 1e3:9.2f} ms")


if __name__ == "__main__":
    main()
