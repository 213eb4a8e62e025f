"""Round-capped segment rasterisation.

A pixel (row i, col j) has its centre at (j, i) in pixel coordinates and is
set when its squared distance to a segment is at most ``radius**2``.
"""

import math

import numpy as np

from .._accel import jit, use_numba


def _draw_segments_loop(canvas, segs, radius):
    h, w = canvas.shape
    r2 = radius * radius
    for s in range(segs.shape[0]):
        x0, y0, x1, y1 = segs[s, 0], segs[s, 1], segs[s, 2], segs[s, 3]
        dx = x1 - x0
        dy = y1 - y0
        ll = dx * dx + dy * dy
        c0 = max(0, int(math.floor(min(x0, x1) - radius)))
        c1 = min(w - 1, int(math.ceil(max(x0, x1) + radius)))
        r0 = max(0, int(math.floor(min(y0, y1) - radius)))
        r1 = min(h - 1, int(math.ceil(max(y0, y1) + radius)))
        for i in range(r0, r1 + 1):
            for j in range(c0, c1 + 1):
                px = j - x0
                py = i - y0
                t = 0.0
                if ll > 0.0:
                    t = (px * dx + py * dy) / ll
                    if t < 0.0:
                        t = 0.0
                    elif t > 1.0:
                        t = 1.0
                ex = px - t * dx
                ey = py - t * dy
                if ex * ex + ey * ey <= r2:
                    canvas[i, j] = 1.0
    return canvas


_draw_segments_nb = jit(_draw_segments_loop)


def _draw_segments_np(canvas, segs, radius):
    h, w = canvas.shape
    r2 = radius * radius
    for x0, y0, x1, y1 in segs:
        dx = x1 - x0
        dy = y1 - y0
        ll = dx * dx + dy * dy
        c0 = max(0, int(math.floor(min(x0, x1) - radius)))
        c1 = min(w - 1, int(math.ceil(max(x0, x1) + radius)))
        r0 = max(0, int(math.floor(min(y0, y1) - radius)))
        r1 = min(h - 1, int(math.ceil(max(y0, y1) + radius)))
        if c0 > c1 or r0 > r1:
            continue
        py, px = np.mgrid[r0 : r1 + 1, c0 : c1 + 1].astype(np.float64)
        px -= x0
        py -= y0
        if ll > 0.0:
            t = np.clip((px * dx + py * dy) / ll, 0.0, 1.0)
        else:
            t = np.zeros_like(px)
        ex = px - t * dx
        ey = py - t * dy
        hit = ex * ex + ey * ey <= r2
        canvas[r0 : r1 + 1, c0 : c1 + 1][hit] = 1.0
    return canvas


def draw_segments(canvas, segs, radius):
    """Burn segments ``(S, 4)`` of ``x0, y0, x1, y1`` into ``canvas`` in place."""
    segs = np.ascontiguousarray(segs, dtype=np.float64).reshape(-1, 4)
    if use_numba():
        return _draw_segments_nb(canvas, segs, float(radius))
    return _draw_segments_np(canvas, segs, float(radius))
