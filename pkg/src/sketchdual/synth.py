"""Parametric stroke-sketch generators used as a desk-scale dataset.

Each family draws a jittered primitive as several strokes and shuffles the
stroke order per sample. ``polygon-reversed`` draws exactly the polygon
geometry with every side traversed backwards: its rasters are distributed like
``polygon``'s, so only stroke geometry tells the two apart.
"""

import math

import numpy as np

from .sketch import Sketch

DEFAULT_FAMILIES = ("polygon", "star", "spiral", "grid", "arc-chain")
CANVAS = 256.0
_JITTER = 0.012
_ROTATION = math.radians(8.0)


def _densify(a, b, rng, pieces=6):
    t = np.linspace(0.0, 1.0, pieces + 1)[:, None]
    pts = a + t * (b - a)
    pts[1:-1] += rng.normal(scale=_JITTER, size=pts[1:-1].shape)
    return pts


def _polygon(rng, reverse=False):
    n = int(rng.integers(3, 7))
    phase = rng.uniform(0, 2 * math.pi / n)
    ang = phase + 2 * math.pi * np.arange(n) / n
    verts = np.column_stack([np.cos(ang), np.sin(ang)]) + rng.normal(scale=_JITTER, size=(n, 2))
    strokes = [_densify(verts[i], verts[(i + 1) % n], rng) for i in range(n)]
    return [s[::-1] for s in strokes] if reverse else strokes


def _star(rng):
    k = int(rng.integers(5, 8))
    phase = rng.uniform(0, 2 * math.pi / k)
    outer = phase + 2 * math.pi * np.arange(k) / k
    inner = outer + math.pi / k
    r_in = rng.uniform(0.35, 0.5)
    o = np.column_stack([np.cos(outer), np.sin(outer)])
    i = r_in * np.column_stack([np.cos(inner), np.sin(inner)])
    strokes = []
    for j in range(k):
        prev_inner = i[j - 1]
        arm = np.vstack([_densify(prev_inner, o[j], rng, 3), _densify(o[j], i[j], rng, 3)[1:]])
        strokes.append(arm)
    return strokes


def _spiral(rng):
    turns = rng.uniform(2.0, 3.0)
    t = np.linspace(0.0, turns * 2 * math.pi, 120)
    r = 0.1 + 0.9 * t / t[-1]
    pts = np.column_stack([r * np.cos(t), r * np.sin(t)]) + rng.normal(scale=_JITTER / 2, size=(len(t), 2))
    cuts = np.sort(rng.choice(np.arange(15, 105), size=int(rng.integers(2, 5)), replace=False))
    bounds = [0, *cuts, len(t) - 1]
    return [pts[a : b + 1] for a, b in zip(bounds[:-1], bounds[1:])]


def _grid(rng):
    nh, nv = int(rng.integers(3, 5)), int(rng.integers(3, 5))
    strokes = []
    for y in np.linspace(-1, 1, nh) + rng.normal(scale=_JITTER, size=nh):
        strokes.append(_densify(np.array([-1.0, y]), np.array([1.0, y]), rng))
    for x in np.linspace(-1, 1, nv) + rng.normal(scale=_JITTER, size=nv):
        strokes.append(_densify(np.array([x, -1.0]), np.array([x, 1.0]), rng))
    return strokes


def _arc_chain(rng):
    n = int(rng.integers(3, 6))
    width = 2.0 / n
    strokes = []
    for j in range(n):
        cx = -1.0 + width * (j + 0.5)
        t = np.linspace(math.pi, 0.0, 12)
        arc = np.column_stack([cx + width / 2 * np.cos(t), -width / 2 * np.sin(t) * 1.5])
        strokes.append(arc + rng.normal(scale=_JITTER, size=arc.shape))
    return strokes


_GENERATORS = {
    "polygon": _polygon,
    "polygon-reversed": lambda rng: _polygon(rng, reverse=True),
    "star": _star,
    "spiral": _spiral,
    "grid": _grid,
    "arc-chain": _arc_chain,
}

FAMILIES = tuple(_GENERATORS)


def _place(strokes, rng, stretch):
    a = rng.uniform(-_ROTATION, _ROTATION)
    rot = np.array([[math.cos(a), -math.sin(a)], [math.sin(a), math.cos(a)]])
    size = rng.uniform(0.3, 0.45) * CANVAS
    center = CANVAS / 2 + rng.uniform(-0.1, 0.1, size=2) * CANVAS
    return [(s * [stretch, 1.0]) @ rot.T * size + center for s in strokes]


def synth_generate(classes, per_class, seed=0, families=None):
    """``classes * per_class`` labelled sketches, classes in order, stroke order shuffled.

    When more classes are requested than families, families repeat with a
    horizontal stretch so every class stays distinct.
    """
    if classes < 2:
        raise ValueError("need at least two classes")
    families = tuple(families or DEFAULT_FAMILIES)
    unknown = set(families) - set(_GENERATORS)
    if unknown:
        raise ValueError(f"unknown synthetic families: {sorted(unknown)}")
    rng = np.random.default_rng(seed)
    out = []
    for c in range(classes):
        fam = families[c % len(families)]
        variant = c // len(families)
        label = fam if variant == 0 else f"{fam}-{variant}"
        stretch = 1.0 + 0.5 * variant
        for _ in range(per_class):
            strokes = _place(_GENERATORS[fam](rng), rng, stretch)
            order = rng.permutation(len(strokes))
            out.append(Sketch.from_polylines([strokes[i] for i in order], label, (CANVAS, CANVAS)))
    return out
