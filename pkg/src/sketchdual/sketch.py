"""Stroke-ordered sketches: parsing, normalisation, stroke groups, rasters.

Coordinates are canvas pixels with ``y`` pointing down. A stroke's points are
an ``(n, 2)`` float64 array of ``(x, y)`` rows.
"""

import json
import math
import re
import xml.etree.ElementTree as ET
from dataclasses import dataclass, replace

import numpy as np

from .kernels import draw_segments

N_GROUPS = 5
N_CROPS = 10
NORMALIZE_FILL = 0.94
AUGMENT_ROTATIONS = (-5.0, -3.0, 0.0, 3.0, 5.0)
AUGMENT_SHIFT = 15.0
CURVE_SAMPLES = 16


class SketchError(ValueError):
    pass


class SketchParseError(SketchError):
    def __init__(self, message, offset=0):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


class EmptySketchError(SketchParseError):
    pass


@dataclass(frozen=True, eq=False)
class Stroke:
    points: np.ndarray
    order_index: int = 0

    def __post_init__(self):
        pts = np.array(self.points, dtype=np.float64).reshape(-1, 2)
        if len(pts) == 0:
            raise SketchError("stroke has no points")
        if not np.all(np.isfinite(pts)):
            raise SketchError("stroke has non-finite coordinates")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    def __eq__(self, other):
        return (
            isinstance(other, Stroke)
            and self.order_index == other.order_index
            and np.array_equal(self.points, other.points)
        )


@dataclass(frozen=True, eq=False)
class Sketch:
    strokes: tuple
    label: object = None
    canvas: tuple = (256.0, 256.0)

    def __post_init__(self):
        strokes = tuple(sorted(self.strokes, key=lambda s: s.order_index))
        orders = [s.order_index for s in strokes]
        if len(set(orders)) != len(orders):
            raise SketchError("duplicate stroke order_index")
        object.__setattr__(self, "strokes", strokes)
        object.__setattr__(self, "canvas", (float(self.canvas[0]), float(self.canvas[1])))

    @classmethod
    def from_polylines(cls, polylines, label=None, canvas=(256.0, 256.0)):
        return cls(tuple(Stroke(p, i) for i, p in enumerate(polylines)), label, canvas)

    @property
    def n_strokes(self):
        return len(self.strokes)

    def polylines(self):
        return [s.points for s in self.strokes]

    def all_points(self):
        return np.concatenate([s.points for s in self.strokes], axis=0)

    def map_points(self, fn, **changes):
        """New sketch with ``fn`` applied to every stroke's point array."""
        strokes = tuple(Stroke(fn(s.points), s.order_index) for s in self.strokes)
        return replace(self, strokes=strokes, **changes)

    def __eq__(self, other):
        return (
            isinstance(other, Sketch)
            and self.label == other.label
            and self.canvas == other.canvas
            and self.strokes == other.strokes
        )


def validate(sketch):
    if sketch.n_strokes < 1:
        raise EmptySketchError("sketch has no strokes")
    return sketch


# --------------------------------------------------------------------------
# parsing


def _byte_offset(text, char_pos):
    return len(text[:char_pos].encode("utf-8"))


def _parse_canonical(raw):
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise SketchParseError("invalid UTF-8", exc.start) from exc
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SketchParseError(exc.msg, _byte_offset(text, exc.pos)) from exc
    if not isinstance(obj, dict) or "strokes" not in obj:
        raise SketchParseError("expected an object with a 'strokes' array")
    label = obj.get("label")
    if label is not None and not isinstance(label, str):
        raise SketchParseError("'label' must be a string or null")
    canvas = obj.get("canvas", [256, 256])
    if not (isinstance(canvas, list) and len(canvas) == 2 and all(isinstance(v, (int, float)) for v in canvas)):
        raise SketchParseError("'canvas' must be [width, height]")
    strokes = obj["strokes"]
    if not isinstance(strokes, list):
        raise SketchParseError("'strokes' must be an array")
    if not strokes:
        raise EmptySketchError("sketch has no strokes")
    polylines = []
    for i, stroke in enumerate(strokes):
        try:
            pts = np.array(stroke, dtype=np.float64)
        except (TypeError, ValueError) as exc:
            raise SketchParseError(f"stroke {i} is not a list of [x, y] pairs") from exc
        if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) == 0:
            raise SketchParseError(f"stroke {i} is not a nonempty list of [x, y] pairs")
        polylines.append(pts)
    try:
        return Sketch.from_polylines(polylines, label, canvas)
    except SketchError as exc:
        raise SketchParseError(str(exc)) from exc


_PATH_TOKEN = re.compile(r"[MmLlHhVvZzCcSsQqTtAa]|[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?")
_ARG_COUNT = {"M": 2, "L": 2, "H": 1, "V": 1, "Z": 0, "C": 6, "S": 4, "Q": 4, "T": 2}


def _bezier(ctrl, n=CURVE_SAMPLES):
    # uniform parameter samples excluding t=0 (the current point)
    t = np.linspace(0.0, 1.0, n + 1)[1:, None]
    if len(ctrl) == 3:
        p0, p1, p2 = ctrl
        return (1 - t) ** 2 * p0 + 2 * (1 - t) * t * p1 + t**2 * p2
    p0, p1, p2, p3 = ctrl
    return (1 - t) ** 3 * p0 + 3 * (1 - t) ** 2 * t * p1 + 3 * (1 - t) * t**2 * p2 + t**3 * p3


def parse_path_data(d):
    """Flatten SVG path data into an ``(n, 2)`` polyline.

    Move/line commands map to vertices; quadratic and cubic curves are sampled
    at 16 uniform parameter values per segment. Arcs are rejected.
    """
    tokens = _PATH_TOKEN.findall(d)
    pts = []
    cur = np.zeros(2)
    start = np.zeros(2)
    last_ctrl = None
    cmd = None
    i = 0
    while i < len(tokens):
        tok = tokens[i]
        if tok.isalpha():
            cmd = tok
            i += 1
            if cmd in "Zz":
                cur = start.copy()
                pts.append(cur.copy())
                last_ctrl = None
                continue
        elif cmd is None:
            raise ValueError("path data must start with a command")
        up = cmd.upper()
        if up == "A":
            raise ValueError("arc commands are not supported")
        n = _ARG_COUNT[up]
        args = tokens[i : i + n]
        if len(args) < n or any(a.isalpha() for a in args):
            raise ValueError(f"command {cmd!r} expects {n} numbers")
        vals = np.array(args, dtype=np.float64)
        i += n
        rel = cmd.islower()
        base = cur if rel else np.zeros(2)
        if up == "M":
            cur = base + vals
            start = cur.copy()
            pts.append(cur.copy())
            cmd = "l" if rel else "L"
            last_ctrl = None
        elif up == "L":
            cur = base + vals
            pts.append(cur.copy())
            last_ctrl = None
        elif up == "H":
            cur = np.array([(cur[0] if rel else 0.0) + vals[0], cur[1]])
            pts.append(cur.copy())
            last_ctrl = None
        elif up == "V":
            cur = np.array([cur[0], (cur[1] if rel else 0.0) + vals[0]])
            pts.append(cur.copy())
            last_ctrl = None
        elif up == "C":
            c1, c2, end = base + vals[0:2], base + vals[2:4], base + vals[4:6]
            pts.extend(_bezier((cur, c1, c2, end)))
            last_ctrl, cur = c2, end
        elif up == "S":
            c1 = 2 * cur - last_ctrl if last_ctrl is not None else cur.copy()
            c2, end = base + vals[0:2], base + vals[2:4]
            pts.extend(_bezier((cur, c1, c2, end)))
            last_ctrl, cur = c2, end
        elif up == "Q":
            c1, end = base + vals[0:2], base + vals[2:4]
            pts.extend(_bezier((cur, c1, end)))
            last_ctrl, cur = c1, end
        elif up == "T":
            c1 = 2 * cur - last_ctrl if last_ctrl is not None else cur.copy()
            end = base + vals
            pts.extend(_bezier((cur, c1, end)))
            last_ctrl, cur = c1, end
    if not pts:
        raise ValueError("path has no points")
    return np.array(pts, dtype=np.float64)


def _local(tag):
    return tag.rsplit("}", 1)[-1]


def _svg_canvas(root):
    vb = root.get("viewBox")
    if vb:
        parts = [float(v) for v in re.split(r"[\s,]+", vb.strip())]
        if len(parts) == 4:
            return parts[2], parts[3]
    try:
        return float(re.sub(r"[a-z%]+$", "", root.get("width"))), float(re.sub(r"[a-z%]+$", "", root.get("height")))
    except (TypeError, ValueError):
        return None


def _parse_svg(raw):
    try:
        root = ET.fromstring(raw)
    except ET.ParseError as exc:
        line, col = exc.position
        lines = raw.split(b"\n")
        offset = sum(len(l) + 1 for l in lines[: line - 1]) + col
        raise SketchParseError(f"malformed SVG: {exc}", offset) from exc
    polylines = []
    for el in root.iter():
        tag = _local(el.tag)
        try:
            if tag == "path":
                polylines.append(parse_path_data(el.get("d", "")))
            elif tag == "polyline":
                nums = [float(v) for v in re.split(r"[\s,]+", el.get("points", "").strip()) if v]
                if not nums or len(nums) % 2:
                    raise ValueError("polyline needs an even number of coordinates")
                polylines.append(np.array(nums).reshape(-1, 2))
        except ValueError as exc:
            offset = raw.find(el.get("id", tag).encode()) if el.get("id") else raw.find(f"<{tag}".encode())
            raise SketchParseError(f"bad <{tag}>: {exc}", max(offset, 0)) from exc
    if not polylines:
        raise EmptySketchError("SVG contains no path or polyline elements")
    canvas = _svg_canvas(root)
    if canvas is None:
        allpts = np.concatenate(polylines)
        canvas = (float(allpts[:, 0].max()), float(allpts[:, 1].max()))
    return Sketch.from_polylines(polylines, None, canvas)


def parse_sketch(raw, format="canonical"):
    """Parse a canonical JSON or SVG sketch from ``raw`` bytes."""
    if isinstance(raw, str):
        raw = raw.encode("utf-8")
    if format == "canonical":
        return _parse_canonical(raw)
    if format == "svg":
        return _parse_svg(raw)
    raise ValueError(f"unknown sketch format {format!r}")


def dumps_sketch(sketch):
    obj = {
        "label": sketch.label,
        "canvas": list(sketch.canvas),
        "strokes": [s.points.tolist() for s in sketch.strokes],
    }
    return json.dumps(obj, separators=(",", ":")).encode("utf-8")


def load_sketch(path, format=None):
    path = str(path)
    if format is None:
        format = "svg" if path.lower().endswith(".svg") else "canonical"
    with open(path, "rb") as fh:
        return parse_sketch(fh.read(), format)


def save_sketch(sketch, path):
    with open(path, "wb") as fh:
        fh.write(dumps_sketch(sketch))


# --------------------------------------------------------------------------
# geometry


def normalize_sketch(sketch, canvas=None):
    """Scale and centre so the stroke bounding box fills 94% of ``canvas``."""
    if canvas is None:
        canvas = sketch.canvas
    elif np.isscalar(canvas):
        canvas = (canvas, canvas)
    w, h = float(canvas[0]), float(canvas[1])
    pts = sketch.all_points()
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    extent = hi - lo
    mid = (lo + hi) / 2.0
    ratios = [NORMALIZE_FILL * c / e for c, e in zip((w, h), extent) if e > 0]
    scale = min(ratios) if ratios else 1.0
    center = np.array([w / 2.0, h / 2.0])
    return sketch.map_points(lambda p: (p - mid) * scale + center, canvas=(w, h))


def group_sizes(n, groups=N_GROUPS):
    """Prefix lengths ``ceil(j * n / groups)`` for ``j = 1..groups``."""
    return [(j * n + groups - 1) // groups for j in range(1, groups + 1)]


def split_stroke_groups(sketch):
    """Five cumulative stroke-prefix sketches in temporal order."""
    validate(sketch)
    return [replace(sketch, strokes=sketch.strokes[:c]) for c in group_sizes(sketch.n_strokes)]


def sketch_segments(sketch, scale=1.0):
    """``(S, 4)`` segments in pixel coordinates (pixel centres at integers).

    Single-point strokes become zero-length segments.
    """
    segs = []
    for s in sketch.strokes:
        p = s.points * scale - 0.5
        if len(p) == 1:
            p = np.vstack([p, p])
        segs.append(np.hstack([p[:-1], p[1:]]))
    return np.concatenate(segs, axis=0)


def rasterize(sketch, size, line_width=2.0):
    """Binary ``(size, size)`` raster, foreground 1.0, of round-capped polylines.

    The canvas maps onto the raster by the uniform factor ``size / max(canvas)``.
    """
    canvas = np.zeros((size, size))
    scale = size / max(sketch.canvas)
    draw_segments(canvas, sketch_segments(sketch, scale), line_width / 2.0)
    return canvas


def crop_offsets(height, width, crop):
    """Row/col offsets in order top-left, bottom-left, top-right, bottom-right, centre."""
    dh, dw = height - crop, width - crop
    return [(0, 0), (dh, 0), (0, dw), (dh, dw), (dh // 2, dw // 2)]


def ten_crop_sequence(bitmap, crop):
    """Ten crops ``(10, crop, crop)``: odd steps from the bitmap, even steps from its mirror.

    Step ``2k+1`` is crop position ``k`` of the original and step ``2k+2`` the same
    position cut from the horizontally reflected bitmap.
    """
    h, w = bitmap.shape
    if crop > min(h, w) or crop < 1:
        raise ValueError(f"crop {crop} does not fit a {h}x{w} bitmap")
    mirrored = bitmap[:, ::-1]
    out = np.empty((N_CROPS, crop, crop), dtype=bitmap.dtype)
    for k, (r, c) in enumerate(crop_offsets(h, w, crop)):
        out[2 * k] = bitmap[r : r + crop, c : c + crop]
        out[2 * k + 1] = mirrored[r : r + crop, c : c + crop]
    return out


def reflect(sketch):
    w = sketch.canvas[0]
    return sketch.map_points(lambda p: np.column_stack([w - p[:, 0], p[:, 1]]))


def rotate(sketch, degrees):
    """Rotate about the canvas centre; positive angles turn +x towards +y."""
    if degrees == 0:
        return sketch
    a = math.radians(degrees)
    rot = np.array([[math.cos(a), -math.sin(a)], [math.sin(a), math.cos(a)]])
    center = np.array(sketch.canvas) / 2.0
    return sketch.map_points(lambda p: (p - center) @ rot.T + center)


def shift(sketch, dx, dy):
    return sketch.map_points(lambda p: p + np.array([dx, dy]))


def augment(sketch):
    """The 18 training variants: 2 reflections x 5 rotations, plus 8 shifts of the original."""
    out = []
    for mirrored in (False, True):
        base = reflect(sketch) if mirrored else sketch
        out.extend(rotate(base, deg) for deg in AUGMENT_ROTATIONS)
    for dx in (-AUGMENT_SHIFT, 0.0, AUGMENT_SHIFT):
        for dy in (-AUGMENT_SHIFT, 0.0, AUGMENT_SHIFT):
            if dx or dy:
                out.append(shift(sketch, dx, dy))
    return out
