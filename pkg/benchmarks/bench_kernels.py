"""Compiled vs numpy kernel timings, plus one IENet training step per backend.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--no-step]

Kernel timings call both backend modules directly. The training step runs in
a subprocess per backend, since the backend is chosen once at import.
"""
from __future__ import annotations

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from hazeforge.kernels import _pykernels

try:
    from hazeforge.kernels import _ckernels
except ImportError:
    _ckernels = None

STEP_SNIPPET = """
import time, numpy as np
from hazeforge import engine as E, kernels
from hazeforge.engine import Tensor
from hazeforge.losses import total_loss
from hazeforge.models import IENet, IENetConfig
rng = np.random.default_rng(0)
x = Tensor(rng.uniform(0.1, 0.9, (8, 3, 32, 32)))
y = Tensor(rng.uniform(0.1, 0.9, (8, 3, 32, 32)))
net = IENet(IENetConfig(seed=0))
best = float("inf")
for _ in range({repeat}):
    t0 = time.perf_counter()
    loss, _ = total_loss(net(x)[1], y)
    E.backward(loss)
    best = min(best, time.perf_counter() - t0)
print(kernels.BACKEND, best)
"""


def cases(rng):
    x16 = rng.standard_normal((8, 16, 32, 32))
    x32 = rng.standard_normal((8, 32, 32, 32))
    img = rng.standard_normal((24, 32, 32))
    taps = rng.uniform(0, 1, 11)
    yield "im2col C16 k3", "im2col", (x16, 3, 1, 1)
    yield "im2col C32 k5", "im2col", (x32, 5, 1, 2)
    cols3 = _pykernels.im2col(x16, 3, 1, 1)
    cols5 = _pykernels.im2col(x32, 5, 1, 2)
    yield "col2im C16 k3", "col2im", (cols3, x16.shape, 3, 1, 1)
    yield "col2im C32 k5", "col2im", (cols5, x32.shape, 5, 1, 2)
    yield "sep_filter 11 taps", "sep_filter_valid", (img, taps)
    g = _pykernels.sep_filter_valid(img, taps)
    yield "sep_filter_T 11 taps", "sep_filter_valid_T", (g, taps, img.shape)
    yield "min_filter 15", "min_filter", (np.abs(img[:4]), 15)


def best_of(fn, args, repeat):
    return min(timeit.repeat(lambda: fn(*args), number=1, repeat=repeat))


def bench_kernels(repeat):
    rng = np.random.default_rng(0)
    print(f"{'kernel':<22}{'numpy ms':>10}{'cython ms':>11}{'speedup':>9}")
    for label, name, args in cases(rng):
        py = best_of(getattr(_pykernels, name), args, repeat) * 1e3
        if _ckernels is None:
            print(f"{label:<22}{py:>10.2f}{'n/a':>11}{'':>9}")
            continue
        cy = best_of(getattr(_ckernels, name), args, repeat) * 1e3
        print(f"{label:<22}{py:>10.2f}{cy:>11.2f}{py / cy:>8.1f}x")


def bench_step(repeat):
    print("\nIENet forward+backward, batch 8 at 32x32:")
    for pure in ("1", "0"):
        env = {**os.environ, "HAZEFORGE_PURE_PYTHON": pure}
        out = subprocess.run([sys.executable, "-c", STEP_SNIPPET.format(repeat=repeat)],
                             env=env, capture_output=True, text=True, check=True).stdout.split()
        print(f"  {out[0]:<8}{float(out[1]) * 1e3:9.1f} ms")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--no-step", action="store_true", help="skip the training-step comparison")
    args = ap.parse_args()
    bench_kernels(args.repeat)
    if not args.no_step:
        bench_step(args.repeat)


if __name__ == "__main__":
    main()
