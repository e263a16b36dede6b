"""Time the compiled kernels against the NumPy fallback.

Usage::

    python benchmarks/bench_kernels.py [--sizes 60 120 400] [--repeat 5]

Prints one row per (kernel, size) with the best-of-``repeat`` time per call
for each backend and the speed-up of the compiled one.
"""
import argparse
import timeit

import numpy as np

from lmsgnn import backend
from lmsgnn.graph import build_knn_graph, eigendecompose, laplacian
from lmsgnn.data import random_coordinates


def _case(n, seed=0):
    rng = np.random.default_rng(seed)
    coords = random_coordinates(n, seed=seed)
    lap = laplacian(build_knn_graph(coords, min(8, n - 1)))
    u = eigendecompose(lap).eigenvectors
    mask = (rng.random(n) < 0.7).astype(float)
    return {
        "lap": lap,
        "lat": np.radians(coords.latitude),
        "lon": np.radians(coords.longitude),
        "u": u,
        "theta": rng.uniform(0.9, 1.1, n),
        "bias": np.zeros(n),
        "steps": np.array([0.001, 0.001, 0.6]),
        "x0": rng.standard_normal(n),
        "y": mask * rng.standard_normal(n),
        "mask": mask,
        "v": rng.standard_normal(n),
        "grad": rng.standard_normal(n),
    }


def _calls(k, c):
    fwd = k.lmsgnn_forward(c["u"], c["theta"], c["bias"], 0.25, c["steps"], c["x0"], c["y"], c["mask"], False)
    return {
        "spectral_apply": lambda: k.spectral_apply(c["u"], c["theta"], c["v"]),
        "lmsgnn_forward": lambda: k.lmsgnn_forward(c["u"], c["theta"], c["bias"], 0.25, c["steps"], c["x0"],
                                                   c["y"], c["mask"], False),
        "lmsgnn_backward": lambda: k.lmsgnn_backward(c["u"], c["theta"], 0.25, c["steps"], c["mask"], fwd[1],
                                                     fwd[2], c["grad"], False),
        "haversine_matrix": lambda: k.haversine_matrix(c["lat"], c["lon"]),
        "jacobi_eigh": lambda: k.jacobi_eigh(c["lap"]),
    }


def _best(fn, repeat):
    number = 1
    while timeit.timeit(fn, number=number) < 0.05 and number < 10_000:
        number *= 4
    return min(timeit.repeat(fn, number=number, repeat=repeat)) / number


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--sizes", type=int, nargs="+", default=[60, 120, 400])
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--jacobi-max", type=int, default=120, help="skip Jacobi above this size")
    args = parser.parse_args(argv)

    names = sorted(backend.BACKENDS)
    if "compiled" not in names:
        print("compiled kernels not built; timing the NumPy backend only")
    print(f"{'kernel':<18}{'n':>6}" + "".join(f"{b + ' [us]':>18}" for b in names)
          + (f"{'speed-up':>10}" if len(names) == 2 else ""))
    for n in args.sizes:
        case = _case(n)
        timings = {b: _calls(backend.BACKENDS[b], case) for b in names}
        for kernel in timings[names[0]]:
            if kernel == "jacobi_eigh" and n > args.jacobi_max:
                continue
            t = {b: _best(timings[b][kernel], args.repeat) for b in names}
            row = f"{kernel:<18}{n:>6}" + "".join(f"{t[b] * 1e6:>18.1f}" for b in names)
            if len(names) == 2:
                row += f"{t['python'] / t['compiled']:>9.1f}x"
            print(row)


if __name__ == "__main__":
    main()
