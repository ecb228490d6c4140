"""Compare the compiled and pure-Python symplectic flow kernels.

    python benchmarks/bench_kernels.py [--repeat 20]

Shapes follow the desk-scale model: 8 windows x 3 channels, 4 heads,
N = L + T tokens, head dim 16.
"""

import argparse
import time

import numpy as np

from stretchtime.kernels import BACKEND, _flow_py

try:
    from stretchtime.kernels import _flow as _flow_c
except ImportError:
    _flow_c = None


def inputs(rng, n_tokens, batch=24, heads=4, pairs=8):
    x = rng.normal(size=(batch, heads, n_tokens, 2 * pairs))
    tau = np.cumsum(rng.uniform(0.5, 1.5, size=(batch, n_tokens)), axis=1)
    alpha, beta, gamma = rng.uniform(-2, 1, size=(3, heads, pairs))
    return x, tau, alpha, beta, gamma


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def bench(mod, args, repeat):
    x, tau, a, b, g = args
    out = np.empty_like(x)
    fwd = best_of(lambda: mod.flow_forward(x, tau, a, b, g, True, out), repeat)
    gout = np.ones_like(x)

    def backward():
        mod.flow_backward(x, tau, a, b, g, True, gout, np.zeros_like(x), np.zeros_like(tau),
                          np.zeros_like(a), np.zeros_like(b), np.zeros_like(g), True, True)

    return fwd, best_of(backward, repeat)


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=20)
    args = parser.parse_args()
    rng = np.random.default_rng(0)
    print(f"default backend: {BACKEND}")
    print(f"{'tokens':>6} {'kernel':>8} {'forward ms':>11} {'backward ms':>12}")
    for n in (192, 432):
        data = inputs(rng, n)
        for name, mod in (("python", _flow_py), ("cython", _flow_c)):
            if mod is None:
                print(f"{n:>6} {name:>8} {'n/a':>11} {'n/a':>12}")
                continue
            fwd, bwd = bench(mod, data, args.repeat)
            print(f"{n:>6} {name:>8} {1e3 * fwd:>11.2f} {1e3 * bwd:>12.2f}")


if __name__ == "__main__":
    main()
