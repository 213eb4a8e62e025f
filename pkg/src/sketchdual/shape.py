"""Coded shape features.

Each stroke is described by shape-context histograms at 5 arc-length samples,
encoded against a k-means codebook with locality-constrained linear coding,
and the stroke codes are max-pooled into one vector per sketch.
"""

from dataclasses import dataclass, field

import numpy as np

from .container import read_container, write_container
from .kernels import log_polar_histograms

N_SAMPLES = 5
N_RADIAL = 5
N_ANGULAR = 12
R_INNER = 1.0 / 8.0
R_OUTER = 2.0
# interior radial edges, log-uniform over [R_INNER, R_OUTER] in units of the scale
RADIAL_EDGES = np.geomspace(R_INNER, R_OUTER, N_RADIAL + 1)[1:-1]
N_BINS = N_RADIAL * N_ANGULAR
DESCRIPTOR_DIM = N_SAMPLES * N_BINS


class ShapeFeatureError(ValueError):
    pass


def sample_stroke_points(points, n=N_SAMPLES):
    """``n`` points at equal arc-length fractions ``0, 1/(n-1), ..., 1`` along a polyline."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    seg = np.hypot(*np.diff(pts, axis=0).T) if len(pts) > 1 else np.zeros(0)
    total = seg.sum()
    if total == 0.0:
        return np.repeat(pts[:1], n, axis=0)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    targets = total * np.arange(n) / (n - 1)
    idx = np.clip(np.searchsorted(cum, targets, side="right") - 1, 0, len(seg) - 1)
    # skip zero-length segments so interpolation never divides by zero
    out = np.empty((n, 2))
    for i, (t, k) in enumerate(zip(targets, idx)):
        while seg[k] == 0.0 and k > 0:
            k -= 1
        frac = min(max((t - cum[k]) / seg[k], 0.0), 1.0) if seg[k] > 0 else 0.0
        out[i] = pts[k] + frac * (pts[k + 1] - pts[k])
    out[-1] = pts[-1]
    return out


def mean_pairwise_distance(pts):
    n = len(pts)
    if n < 2:
        return 0.0
    d = np.hypot(pts[:, None, 0] - pts[None, :, 0], pts[:, None, 1] - pts[None, :, 1])
    return float(d[np.triu_indices(n, 1)].mean())


def shape_context(p, refs, scale):
    """60-bin log-polar histogram of ``refs`` around ``p`` (5 radial x 12 angular)."""
    if not scale > 0:
        raise ShapeFeatureError("shape-context scale must be positive")
    refs = np.asarray(refs, dtype=np.float64).reshape(-1, 2)
    pts = np.vstack([np.asarray(p, dtype=np.float64).reshape(1, 2), refs])
    return log_polar_histograms(pts, scale, RADIAL_EDGES, N_ANGULAR)[0]


def sketch_sample_points(sketch, n=N_SAMPLES):
    return np.concatenate([sample_stroke_points(s.points, n) for s in sketch.strokes], axis=0)


def sketch_descriptors(sketch, n=N_SAMPLES):
    """Descriptors ``(N, n * 60)`` of every stroke against the whole sketch's samples."""
    pts = sketch_sample_points(sketch, n)
    scale = mean_pairwise_distance(pts)
    if scale <= 0.0:
        raise ShapeFeatureError("all sampled points coincide; shape context undefined")
    hist = log_polar_histograms(pts, scale, RADIAL_EDGES, N_ANGULAR)
    return hist.reshape(sketch.n_strokes, n * N_BINS)


def stroke_descriptor(stroke, sketch, n=N_SAMPLES):
    for i, s in enumerate(sketch.strokes):
        if s is stroke or s == stroke:
            return sketch_descriptors(sketch, n)[i]
    raise ShapeFeatureError("stroke does not belong to the sketch")


# --------------------------------------------------------------------------
# codebook


@dataclass
class Codebook:
    centers: np.ndarray  # (M, d)
    seed: int = 0
    inertia: list = field(default_factory=list)
    converged: bool = True

    @property
    def size(self):
        return self.centers.shape[0]

    @property
    def dim(self):
        return self.centers.shape[1]


def _sq_dists(X, C):
    d = (X * X).sum(1)[:, None] - 2.0 * X @ C.T + (C * C).sum(1)[None, :]
    return np.maximum(d, 0.0)


def kmeans_pp_init(X, M, rng):
    """k-means++ seeding; raises if ``X`` holds fewer than ``M`` distinct rows."""
    n = len(X)
    chosen = [int(rng.integers(n))]
    d2 = ((X - X[chosen[0]]) ** 2).sum(1)
    for _ in range(1, M):
        total = d2.sum()
        if total <= 0.0:
            raise ShapeFeatureError(f"fewer than {M} distinct descriptors")
        nxt = int(np.searchsorted(np.cumsum(d2), rng.random() * total, side="right"))
        nxt = min(nxt, n - 1)
        while d2[nxt] == 0.0:
            nxt -= 1
        chosen.append(nxt)
        d2 = np.minimum(d2, ((X - X[nxt]) ** 2).sum(1))
    return X[chosen].copy()


def lloyd(X, centers, iters=100):
    """Lloyd iterations from ``centers``; empty clusters jump to the farthest points.

    Returns ``(centers, labels, inertia_trace, converged)``; ``inertia_trace[i]`` is
    the inertia right after the ``i``-th assignment step.
    """
    centers = centers.copy()
    M = len(centers)
    labels = None
    trace = []
    converged = False
    for _ in range(iters):
        d2 = _sq_dists(X, centers)
        new = np.argmin(d2, axis=1)
        trace.append(float(d2[np.arange(len(X)), new].sum()))
        if labels is not None and np.array_equal(new, labels):
            converged = True
            break
        labels = new
        counts = np.bincount(labels, minlength=M)
        sums = np.zeros_like(centers)
        np.add.at(sums, labels, X)
        full = counts > 0
        centers[full] = sums[full] / counts[full, None]
        empty = np.flatnonzero(~full)
        if len(empty):
            resid = d2[np.arange(len(X)), labels]
            for m, far in zip(empty, np.argsort(-resid, kind="stable")):
                centers[m] = X[far]
    return centers, labels, trace, converged


def build_codebook(descriptors, M, iters=100, seed=0):
    """k-means codebook of ``M`` centers (k-means++ seeding, Lloyd refinement)."""
    X = np.asarray(descriptors, dtype=np.float64)
    if len(X) < M:
        raise ShapeFeatureError(f"need at least {M} descriptors, got {len(X)}")
    rng = np.random.default_rng(seed)
    init = kmeans_pp_init(X, M, rng)
    centers, _, trace, converged = lloyd(X, init, iters)
    return Codebook(centers, seed, trace, converged)


def save_codebook(codebook, path):
    header = {
        "d": codebook.dim,
        "M": codebook.size,
        "seed": codebook.seed,
        "bins": {"samples": N_SAMPLES, "radial": N_RADIAL, "angular": N_ANGULAR, "r_inner": R_INNER, "r_outer": R_OUTER},
    }
    write_container(path, "codebook", header, [codebook.centers])


def load_codebook(path):
    header, payload = read_container(path, "codebook")
    centers = payload.astype(np.float64).reshape(header["M"], header["d"])
    return Codebook(centers, header.get("seed", 0))


# --------------------------------------------------------------------------
# locality-constrained linear coding


@dataclass
class SparseCode:
    indices: np.ndarray
    weights: np.ndarray


def nearest_centers(st, centers, k):
    """Indices of the ``k`` nearest centers, lower index first on ties."""
    d2 = ((centers - st) ** 2).sum(1)
    return np.argsort(d2, kind="stable")[:k]


def _sum_to_one_basis(k):
    # orthonormal basis of {v : sum(v) = 0}
    q, _ = np.linalg.qr(np.column_stack([np.ones(k), np.eye(k)[:, : k - 1]]))
    return q[:, 1:]


def constrained_weights(st, neighbors, reg=0.0):
    """Minimise ``||st - neighbors.T @ w||^2`` subject to ``sum(w) = 1``.

    With ``reg == 0`` the problem is solved exactly in sum-to-one coordinates
    (minimum-norm solution when the neighbours are affinely dependent). With
    ``reg > 0`` the shifted Gram system ``(C + reg * tr(C) I) w = 1`` is solved
    and normalised instead, which trades exactness for a damped solution.
    """
    k = len(neighbors)
    if k == 1:
        return np.ones(1)
    if reg > 0.0:
        D = neighbors - st
        C = D @ D.T
        tr = np.trace(C)
        w = np.linalg.solve(C + (reg * tr if tr > 0 else reg) * np.eye(k), np.ones(k))
        return w / w.sum()
    basis = _sum_to_one_basis(k)
    w0 = np.full(k, 1.0 / k)
    A = neighbors.T @ basis
    v = np.linalg.lstsq(A, st - neighbors.T @ w0, rcond=None)[0]
    w = w0 + basis @ v
    # fold rounding drift back onto the constraint
    return w + (1.0 - w.sum()) / k


def llc_encode(st, codebook, k=5, reg=0.0):
    centers = codebook.centers if isinstance(codebook, Codebook) else np.asarray(codebook)
    if len(centers) < k:
        raise ShapeFeatureError(f"codebook has {len(centers)} centers, fewer than k={k}")
    st = np.asarray(st, dtype=np.float64)
    idx = nearest_centers(st, centers, k)
    return SparseCode(idx, constrained_weights(st, centers[idx], reg))


def pool_shape_feature(codes, M):
    """Componentwise max of the stroke codes scattered into ``M`` dims (0 where unused)."""
    if not codes:
        raise ShapeFeatureError("cannot pool an empty code list")
    out = np.full(M, -np.inf)
    for c in codes:
        np.maximum.at(out, c.indices, c.weights)
    out[np.isneginf(out)] = 0.0
    return out


def shape_feature(sketch, codebook, k=5, reg=0.0):
    """Pooled LLC feature of one sketch (or stroke group)."""
    desc = sketch_descriptors(sketch)
    return pool_shape_feature([llc_encode(d, codebook, k, reg) for d in desc], codebook.size)
