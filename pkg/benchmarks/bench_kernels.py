"""Timing comparison: compiled convolution/pool kernels vs the numpy fallback.

Run after building the extension in place:

    python3 setup.py build_ext --inplace
    python3 benchmarks/bench_kernels.py
"""

import time

import numpy as np

from csil._kernels import conv_py

try:
    from csil._kernels import _conv_ext
except ImportError:
    _conv_ext = None

SHAPES = [
    # (batch, cin, h, w, cout, k) typical for the CNN extractor
    (64, 3, 32, 32, 8, 3),
    (64, 8, 15, 15, 16, 3),
    (16, 3, 32, 32, 8, 3),
]
POOL_SHAPES = [(64, 8, 30, 30), (64, 16, 13, 13)]


def timeit(fn, repeats=5):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_conv(impl, x, w, gy):
    fwd = timeit(lambda: impl.conv2d_forward(x, w))
    bwd = timeit(lambda: impl.conv2d_backward(x, w, gy))
    return fwd, bwd


def bench_pool(impl, x):
    y, idx = impl.maxpool2d_forward(x, 2)
    fwd = timeit(lambda: impl.maxpool2d_forward(x, 2))
    gy = np.ones_like(y)
    bwd = timeit(lambda: impl.maxpool2d_backward(gy, idx, x.shape))
    return fwd, bwd


def main():
    if _conv_ext is None:
        print("compiled extension not built; run: python3 setup.py build_ext --inplace")
        return
    rng = np.random.default_rng(0)
    print(f"{'kernel':<34} {'numpy':>10} {'compiled':>10} {'speedup':>8}")
    for n, cin, h, w, cout, k in SHAPES:
        x = rng.normal(size=(n, cin, h, w))
        wt = rng.normal(size=(cout, cin, k, k))
        gy = rng.normal(size=(n, cout, h - k + 1, w - k + 1))
        (pf, pb) = bench_conv(conv_py, x, wt, gy)
        (cf, cb) = bench_conv(_conv_ext, x, wt, gy)
        label = f"conv {n}x{cin}x{h}x{w} -> {cout}"
        print(f"{label + ' fwd':<34} {pf * 1e3:>8.2f}ms {cf * 1e3:>8.2f}ms {pf / cf:>7.2f}x")
        print(f"{label + ' bwd':<34} {pb * 1e3:>8.2f}ms {cb * 1e3:>8.2f}ms {pb / cb:>7.2f}x")
    for shape in POOL_SHAPES:
        x = rng.normal(size=shape)
        (pf, pb) = bench_pool(conv_py, x)
        (cf, cb) = bench_pool(_conv_ext, x)
        label = f"maxpool2 {'x'.join(map(str, shape))}"
        print(f"{label + ' fwd':<34} {pf * 1e3:>8.2f}ms {cf * 1e3:>8.2f}ms {pf / cf:>7.2f}x")
        print(f"{label + ' bwd':<34} {pb * 1e3:>8.2f}ms {cb * 1e3:>8.2f}ms {pb / cb:>7.2f}x")


if __name__ == "__main__":
    main()
