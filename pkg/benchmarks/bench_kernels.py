"""Compare the compiled and numpy im2col/col2im backends on search-sized inputs.

Usage: python benchmarks/bench_kernels.py [--reps N]
"""

import argparse
import time

import numpy as np

from denas.autodiff import kernels

CASES = [
    # (batch, channels, size, kernel, stride, dilation)
    (16, 16, 32, 3, 1, 1),
    (16, 16, 32, 3, 1, 3),
    (16, 32, 16, 3, 2, 1),
    (1, 64, 32, 3, 1, 2),
]


def bench(fn, reps):
    fn()
    t0 = time.perf_counter()
    for _ in range(reps):
        fn()
    return (time.perf_counter() - t0) / reps


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--reps", type=int, default=20)
    args = ap.parse_args()
    backends = ["python"] + (["compiled"] if kernels.BACKEND == "compiled" else [])
    print(f"{'case':<28}" + "".join(f"{b + ' im2col':>18}{b + ' col2im':>18}" for b in backends))
    rng = np.random.default_rng(0)
    for n, c, s, k, st, d in CASES:
        pad = d * (k - 1) // 2
        oh = (s + 2 * pad - d * (k - 1) - 1) // st + 1
        x = rng.normal(size=(n, c, s, s))
        cols = kernels.im2col(x, k, st, d, pad, oh, oh, backend="python")
        row = f"{f'n{n} c{c} {s}x{s} k{k} s{st} d{d}':<28}"
        for b in backends:
            t_fwd = bench(lambda: kernels.im2col(x, k, st, d, pad, oh, oh, backend=b), args.reps)
            t_bwd = bench(lambda: kernels.col2im(cols, c, s, s, k, st, d, pad, oh, oh, backend=b), args.reps)
            row += f"{t_fwd * 1e3:>15.3f} ms{t_bwd * 1e3:>15.3f} ms"
        print(row)


if __name__ == "__main__":
    main()
