"""Compare the compiled dense kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--seed 0]

Prints the best-of-``repeat`` time per call for each backend and the speedup,
and checks that both backends return bitwise identical arrays.
"""

import argparse
import timeit

import numpy as np

from vnn_arena import kernels

SHAPES = [(1, 16, 16), (64, 16, 16), (256, 64, 64), (1024, 128, 128), (32, 784, 100)]


def bench(fn, args, repeat):
    number = max(1, int(0.05 / max(timeit.timeit(lambda: fn(*args), number=1), 1e-7)))
    return min(timeit.repeat(lambda: fn(*args), number=number, repeat=repeat)) / number


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args(argv)
    if kernels.compiled is None:
        print("compiled extension not available; build it with `pip install -e . --no-build-isolation`")
        return 1

    rng = np.random.default_rng(args.seed)
    print(f"{'kernel':<15}{'batch x in x out':>20}{'compiled us':>14}{'python us':>12}{'speedup':>10}")
    for B, n, m in SHAPES:
        X = rng.normal(size=(B, n))
        W = rng.normal(size=(m, n))
        b = rng.normal(size=m)
        L = X - np.abs(rng.normal(size=X.shape))
        cases = {"dense_forward": (X, W, b), "dense_interval": (L, X, W, b)}
        for name, inputs in cases.items():
            c_fn, p_fn = getattr(kernels.compiled, name), getattr(kernels.fallback, name)
            out_c, out_p = c_fn(*inputs), p_fn(*inputs)
            if not isinstance(out_c, tuple):
                out_c, out_p = (out_c,), (out_p,)
            assert all(a.tobytes() == q.tobytes() for a, q in zip(out_c, out_p)), name
            tc, tp = bench(c_fn, inputs, args.repeat), bench(p_fn, inputs, args.repeat)
            print(f"{name:<15}{f'{B} x {n} x {m}':>20}{tc * 1e6:>14.1f}{tp * 1e6:>12.1f}{tp / tc:>9.2f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
