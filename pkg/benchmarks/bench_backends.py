"""Time the compiled kernels against the numpy fallback.

Usage: ``python benchmarks/bench_backends.py [--paths N] [--repeat R]``
"""
import argparse
import time

import numpy as np

from sigmaq import backend
from sigmaq.core import RngSpec, make_grid
from sigmaq.simulate import brownian_paths, reflected_bm_paths, squared_bessel_paths


def _normals(n_paths, n_steps):
    out = np.empty((n_paths, n_steps))
    backend.kernels.fill_normals(1, 0, out, 0)


CASES = {
    "normals": lambda n: _normals(n, 4096),
    "brownian": lambda n: brownian_paths(make_grid(16.0, 2.0**-8), RngSpec(1), n),
    "reflected_bm": lambda n: reflected_bm_paths(make_grid(16.0, 2.0**-8), RngSpec(1), n),
    "squared_bessel": lambda n: squared_bessel_paths(make_grid(4.0, 2.0**-6), RngSpec(1), n, 4.0 / 3.0),
}


def best_of(fn, n_paths, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(n_paths)
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--paths", type=int, default=1000)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    names = backend.available()
    print(f"{'case':<16}" + "".join(f"{n:>12}" for n in names) + ("     speedup" if len(names) > 1 else ""))
    for case, fn in CASES.items():
        row = {}
        for name in names:
            backend.use(name)
            row[name] = best_of(fn, args.paths, args.repeat)
        line = f"{case:<16}" + "".join(f"{row[n]:>11.3f}s" for n in names)
        if len(names) > 1:
            line += f"{row['python'] / row['cython']:>11.1f}x"
        print(line)
    backend.use(names[0])


if __name__ == "__main__":
    main()
