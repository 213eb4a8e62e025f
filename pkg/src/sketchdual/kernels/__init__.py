from .conv import col2im, im2col, maxpool, maxpool_backward, out_size
from .raster import draw_segments
from .shapectx import log_polar_histograms

__all__ = [
    "col2im",
    "draw_segments",
    "im2col",
    "log_polar_histograms",
    "maxpool",
    "maxpool_backward",
    "out_size",
]
