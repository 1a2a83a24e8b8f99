"""Time the compiled and pure-Python conv kernels on the network's layer shapes.

Usage: python benchmarks/bench_kernels.py [--repeats N]
"""
import argparse
import timeit

import numpy as np

from amrl.tensor import kernels

SHAPES = {
    "cmotp first layer": (1, 32, 16),
    "cmotp inner layer": (32, 32, 16),
    "pommerman first layer": (18, 32, 8),
    "pommerman inner layer": (32, 32, 8),
}


def bench(backend, x, w, b, g, repeats):
    fwd = min(timeit.repeat(lambda: backend.conv2d_forward(x, w, b), number=20, repeat=repeats)) / 20
    bwd = min(timeit.repeat(lambda: backend.conv2d_backward(x, w, g), number=20, repeat=repeats)) / 20
    return fwd, bwd


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args(argv)
    backends = {"python": kernels.python_backend}
    if kernels.compiled_backend is not None:
        backends["compiled"] = kernels.compiled_backend
    else:
        print("compiled extension not built; timing the python kernels only")
    rng = np.random.default_rng(0)
    print(f"{'layer':<24}{'backend':<10}{'forward us':>12}{'backward us':>13}{'max |diff|':>12}")
    for label, (c_in, c_out, size) in SHAPES.items():
        x = rng.normal(size=(c_in, size, size))
        w = rng.normal(size=(c_out, c_in, 3, 3))
        b = rng.normal(size=c_out)
        g = rng.normal(size=(c_out, size, size))
        ref = kernels.python_backend.conv2d_forward(x, w, b)
        for name, backend in backends.items():
            fwd, bwd = bench(backend, x, w, b, g, args.repeats)
            diff = np.abs(backend.conv2d_forward(x, w, b) - ref).max()
            print(f"{label:<24}{name:<10}{fwd * 1e6:>12.1f}{bwd * 1e6:>13.1f}{diff:>12.1e}")


if __name__ == "__main__":
    main()
