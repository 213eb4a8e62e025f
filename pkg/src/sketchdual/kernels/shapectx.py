"""Log-polar shape-context histograms for a set of sample points."""

import math

import numpy as np

from .._accel import jit, use_numba


def _histograms_loop(pts, scale, edges, n_theta):
    n = pts.shape[0]
    n_r = edges.shape[0] + 1
    out = np.zeros((n, n_r * n_theta))
    two_pi = 2.0 * math.pi
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            dx = pts[j, 0] - pts[i, 0]
            dy = pts[j, 1] - pts[i, 1]
            r = math.sqrt(dx * dx + dy * dy) / scale
            rb = 0
            while rb < n_r - 1 and r >= edges[rb]:
                rb += 1
            a = math.atan2(dy, dx)
            if a < 0.0:
                a += two_pi
            ab = int(a * n_theta / two_pi)
            if ab >= n_theta:
                ab = n_theta - 1
            out[i, rb * n_theta + ab] += 1.0
    return out


_histograms_nb = jit(_histograms_loop)


def _histograms_np(pts, scale, edges, n_theta):
    n = pts.shape[0]
    n_r = edges.shape[0] + 1
    dx = pts[None, :, 0] - pts[:, None, 0]
    dy = pts[None, :, 1] - pts[:, None, 1]
    r = np.sqrt(dx * dx + dy * dy) / scale
    rb = np.searchsorted(edges, r, side="right")
    a = np.arctan2(dy, dx)
    a = np.where(a < 0.0, a + 2.0 * math.pi, a)
    ab = np.minimum((a * n_theta / (2.0 * math.pi)).astype(np.int64), n_theta - 1)
    flat = rb * n_theta + ab
    out = np.zeros((n, n_r * n_theta))
    rows = np.repeat(np.arange(n), n)
    keep = ~np.eye(n, dtype=bool).ravel()
    np.add.at(out, (rows[keep], flat.ravel()[keep]), 1.0)
    return out


def log_polar_histograms(pts, scale, edges, n_theta):
    """Histogram of every other point around each point of ``pts``.

    ``edges`` are the interior radial edges in units of ``scale`` (ascending);
    distances below the first edge land in radial bin 0 and beyond the last in
    the outermost bin. Angular bin 0 starts at +x and advances with ``atan2``.
    Row ``i`` excludes point ``i`` itself; layout is ``radial * n_theta + angular``.
    """
    pts = np.ascontiguousarray(pts, dtype=np.float64)
    edges = np.ascontiguousarray(edges, dtype=np.float64)
    if use_numba():
        return _histograms_nb(pts, float(scale), edges, int(n_theta))
    return _histograms_np(pts, float(scale), edges, int(n_theta))
