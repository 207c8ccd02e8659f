"""Benchmark the numba conv kernels against the pure-numpy fallback.

Runs both backends on the shapes the training loops actually hit and prints
per-call times plus the speedup ratio.  Select the backend used by the
package itself with UNITS_KERNELS=numba|numpy.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from units.kernels import numba_impl, numpy_impl

SHAPES = [
    # (batch, T, Cin, Cout, kernel, dilation)
    (16, 64, 1, 64, 3, 1),
    (16, 64, 64, 64, 3, 2),
    (16, 64, 64, 64, 3, 4),
    (16, 256, 64, 64, 3, 2),
    (64, 64, 64, 64, 3, 2),
]


def time_call(fn, *args, repeats: int) -> float:
    fn(*args)  # warmup (JIT compile on the numba path)
    t0 = time.perf_counter()
    for _ in range(repeats):
        fn(*args)
    return (time.perf_counter() - t0) / repeats


def main() -> None:
    parser = argparse.ArgumentParser(description="conv kernel benchmark: numba vs numpy")
    parser.add_argument("--repeats", type=int, default=30)
    args = parser.parse_args()

    rng = np.random.default_rng(0)
    header = f"{'shape (B,T,Ci,Co,k,d)':>28} {'dir':>8} {'numpy ms':>10} {'numba ms':>10} {'numba/numpy':>12}"
    print(header)
    print("-" * len(header))
    for b, t, ci, co, k, d in SHAPES:
        x = rng.standard_normal((b, t, ci))
        w = rng.standard_normal((k, ci, co))
        bias = rng.standard_normal(co)
        gy = rng.standard_normal((b, t, co))

        t_np = time_call(numpy_impl.conv1d_forward, x, w, bias, d, repeats=args.repeats)
        t_nb = time_call(numba_impl.conv1d_forward, x, w, bias, d, repeats=args.repeats)
        print(f"{str((b, t, ci, co, k, d)):>28} {'fwd':>8} {t_np * 1e3:>10.3f} "
              f"{t_nb * 1e3:>10.3f} {t_nb / t_np:>12.2f}")

        t_np = time_call(numpy_impl.conv1d_backward, x, w, gy, d, repeats=args.repeats)
        t_nb = time_call(numba_impl.conv1d_backward, x, w, gy, d, repeats=args.repeats)
        print(f"{'':>28} {'bwd':>8} {t_np * 1e3:>10.3f} "
              f"{t_nb * 1e3:>10.3f} {t_nb / t_np:>12.2f}")

    # parity spot check
    y_np = numpy_impl.conv1d_forward(x, w, bias, d)
    y_nb = numba_impl.conv1d_forward(x, w, bias, d)
    print(f"\nmax |numpy - numba| on last shape: {np.abs(y_np - y_nb).max():.2e}")


if __name__ == "__main__":
    main()
