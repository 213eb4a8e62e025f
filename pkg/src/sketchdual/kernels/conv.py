"""im2col / col2im and max-pooling kernels on ``(N, C, H, W)`` float64 arrays.

Inputs to im2col are assumed already zero-padded. Column matrices are laid out
``(C * kh * kw, N * OH * OW)`` so a whole batch convolves in one matrix product.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .._accel import jit, use_numba


def out_size(n, k, stride):
    return (n - k) // stride + 1


def _im2col_loop(x, kh, kw, stride):
    n, c, h, w = x.shape
    oh = (h - kh) // stride + 1
    ow = (w - kw) // stride + 1
    p = oh * ow
    cols = np.empty((c * kh * kw, n * p))
    for ch in range(c):
        for ki in range(kh):
            for kj in range(kw):
                row = (ch * kh + ki) * kw + kj
                for b in range(n):
                    for oi in range(oh):
                        src = oi * stride + ki
                        for oj in range(ow):
                            cols[row, b * p + oi * ow + oj] = x[b, ch, src, oj * stride + kj]
    return cols


def _col2im_loop(cols, n, c, h, w, kh, kw, stride):
    oh = (h - kh) // stride + 1
    ow = (w - kw) // stride + 1
    p = oh * ow
    x = np.zeros((n, c, h, w))
    for ch in range(c):
        for ki in range(kh):
            for kj in range(kw):
                row = (ch * kh + ki) * kw + kj
                for b in range(n):
                    for oi in range(oh):
                        dst = oi * stride + ki
                        for oj in range(ow):
                            x[b, ch, dst, oj * stride + kj] += cols[row, b * p + oi * ow + oj]
    return x


def _maxpool_loop(x, k, stride):
    n, c, h, w = x.shape
    oh = (h - k) // stride + 1
    ow = (w - k) // stride + 1
    out = np.empty((n, c, oh, ow))
    arg = np.empty((n, c, oh, ow), dtype=np.int64)
    for b in range(n):
        for ch in range(c):
            for oi in range(oh):
                for oj in range(ow):
                    i0 = oi * stride
                    j0 = oj * stride
                    best = x[b, ch, i0, j0]
                    where = i0 * w + j0
                    for di in range(k):
                        for dj in range(k):
                            v = x[b, ch, i0 + di, j0 + dj]
                            if v > best:
                                best = v
                                where = (i0 + di) * w + j0 + dj
                    out[b, ch, oi, oj] = best
                    arg[b, ch, oi, oj] = where
    return out, arg


def _maxpool_back_loop(dout, arg, h, w):
    n, c, oh, ow = dout.shape
    dx = np.zeros((n, c, h * w))
    for b in range(n):
        for ch in range(c):
            for oi in range(oh):
                for oj in range(ow):
                    dx[b, ch, arg[b, ch, oi, oj]] += dout[b, ch, oi, oj]
    return dx.reshape(n, c, h, w)


_im2col_nb = jit(_im2col_loop)
_col2im_nb = jit(_col2im_loop)
_maxpool_nb = jit(_maxpool_loop)
_maxpool_back_nb = jit(_maxpool_back_loop)


def _im2col_np(x, kh, kw, stride):
    n, c, h, w = x.shape
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    oh, ow = win.shape[2], win.shape[3]
    # (n, c, oh, ow, kh, kw) -> (c, kh, kw, n, oh, ow)
    return np.ascontiguousarray(win.transpose(1, 4, 5, 0, 2, 3)).reshape(c * kh * kw, n * oh * ow)


def _col2im_np(cols, n, c, h, w, kh, kw, stride):
    oh = out_size(h, kh, stride)
    ow = out_size(w, kw, stride)
    cols = cols.reshape(c, kh, kw, n, oh, ow)
    x = np.zeros((n, c, h, w))
    for ki in range(kh):
        for kj in range(kw):
            x[:, :, ki : ki + stride * oh : stride, kj : kj + stride * ow : stride] += cols[:, ki, kj].transpose(1, 0, 2, 3)
    return x


def _maxpool_np(x, k, stride):
    n, c, h, w = x.shape
    win = sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    oh, ow = win.shape[2], win.shape[3]
    flat = win.reshape(n, c, oh, ow, k * k)
    local = np.argmax(flat, axis=-1)
    out = np.take_along_axis(flat, local[..., None], axis=-1)[..., 0]
    di, dj = np.divmod(local, k)
    rows = np.arange(oh)[:, None] * stride + di
    cols = np.arange(ow)[None, :] * stride + dj
    return out, (rows * w + cols).astype(np.int64)


def _maxpool_back_np(dout, arg, h, w):
    n, c = dout.shape[:2]
    dx = np.zeros((n * c, h * w))
    np.add.at(dx, (np.repeat(np.arange(n * c), arg[0, 0].size), arg.reshape(-1)), dout.reshape(-1))
    return dx.reshape(n, c, h, w)


def im2col(x, kh, kw, stride):
    x = np.ascontiguousarray(x, dtype=np.float64)
    if use_numba():
        return _im2col_nb(x, kh, kw, stride)
    return _im2col_np(x, kh, kw, stride)


def col2im(cols, shape, kh, kw, stride):
    n, c, h, w = shape
    cols = np.ascontiguousarray(cols, dtype=np.float64)
    if use_numba():
        return _col2im_nb(cols, n, c, h, w, kh, kw, stride)
    return _col2im_np(cols, n, c, h, w, kh, kw, stride)


def maxpool(x, k, stride):
    """Return pooled values and the flat ``h * w`` index of each window's max (first on ties)."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    if use_numba():
        return _maxpool_nb(x, k, stride)
    return _maxpool_np(x, k, stride)


def maxpool_backward(dout, arg, h, w):
    dout = np.ascontiguousarray(dout, dtype=np.float64)
    if use_numba():
        return _maxpool_back_nb(dout, arg, h, w)
    return _maxpool_back_np(dout, arg, h, w)
