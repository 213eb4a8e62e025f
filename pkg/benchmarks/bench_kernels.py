"""Time the numba and numpy backends of every hot kernel on desk-scale inputs.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Prints one row per kernel: best time per backend and the speedup.
"""

import argparse
import time

import numpy as np

from sketchdual import _accel
from sketchdual.cnn import CnnParams, cnn_forward, desk_config
from sketchdual.kernels import col2im, draw_segments, im2col, log_polar_histograms, maxpool, maxpool_backward
from sketchdual.shape import RADIAL_EDGES
from sketchdual.sketch import rasterize
from sketchdual.synth import synth_generate


def cases(rng):
    x = rng.normal(size=(32, 16, 30, 30))
    cols = im2col(x, 3, 3, 1)
    pooled, arg = maxpool(x, 2, 2)
    segs = rng.uniform(0, 72, size=(400, 4))
    pts = rng.uniform(0, 1, size=(150, 2))
    sketch = synth_generate(2, 1, seed=0)[0]
    params = CnnParams.init(desk_config(5), rng)
    crops = rng.integers(0, 2, size=(50, 64, 64)).astype(float)
    return {
        "draw_segments (400 segs, 72px)": lambda: draw_segments(np.zeros((72, 72)), segs, 1.0),
        "rasterize (synthetic sketch)": lambda: rasterize(sketch, 72),
        "log_polar_histograms (150 pts)": lambda: log_polar_histograms(pts, 0.5, RADIAL_EDGES, 12),
        "im2col (32x16x30x30, 3x3)": lambda: im2col(x, 3, 3, 1),
        "col2im (32x16x30x30, 3x3)": lambda: col2im(cols, x.shape, 3, 3, 1),
        "maxpool (32x16x30x30, 2/2)": lambda: maxpool(x, 2, 2),
        "maxpool_backward": lambda: maxpool_backward(pooled, arg, 30, 30),
        "cnn_forward (50 crops, desk)": lambda: cnn_forward(crops, params),
    }


def best_time(fn, repeat):
    fn()  # warm-up (and JIT compile)
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if not _accel.HAVE_NUMBA:
        raise SystemExit("numba is not installed; nothing to compare")
    rng = np.random.default_rng(0)
    table = cases(rng)
    print(f"{'kernel':<34} {'numba ms':>10} {'numpy ms':>10} {'speedup':>8}")
    prev = _accel.backend()
    try:
        for name, fn in table.items():
            res = {}
            for b in ("numba", "numpy"):
                _accel.set_backend(b)
                res[b] = best_time(fn, args.repeat)
            print(f"{name:<34} {1e3 * res['numba']:>10.3f} {1e3 * res['numpy']:>10.3f} {res['numpy'] / res['numba']:>7.1f}x")
    finally:
        _accel.set_backend(prev)


if __name__ == "__main__":
    main()
