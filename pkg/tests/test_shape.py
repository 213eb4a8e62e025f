import numpy as np
import numpy.testing as npt
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sketchdual.shape import (
    DESCRIPTOR_DIM,
    Codebook,
    ShapeFeatureError,
    SparseCode,
    build_codebook,
    constrained_weights,
    kmeans_pp_init,
    llc_encode,
    lloyd,
    load_codebook,
    mean_pairwise_distance,
    nearest_centers,
    pool_shape_feature,
    sample_stroke_points,
    save_codebook,
    shape_context,
    shape_feature,
    sketch_descriptors,
    stroke_descriptor,
)
from sketchdual.sketch import Sketch

from oracles import arc_fraction, dense_resample, kkt_solve, lloyd_naive, shape_context_naive


def random_sketch(rng, n=4):
    return Sketch.from_polylines([rng.uniform(0, 200, size=(int(rng.integers(2, 6)), 2)) for _ in range(n)])


# --- sampling --------------------------------------------------------------


def test_sample_straight_segment():
    npt.assert_allclose(sample_stroke_points([[0, 0], [4, 0]]), [[0, 0], [1, 0], [2, 0], [3, 0], [4, 0]])


def test_sample_single_point():
    npt.assert_array_equal(sample_stroke_points([[3, 7]]), [[3, 7]] * 5)


def test_sample_skips_repeated_vertices():
    pts = sample_stroke_points([[0, 0], [0, 0], [2, 0], [2, 0], [4, 0]])
    npt.assert_allclose(pts[:, 0], [0, 1, 2, 3, 4])


def test_sample_matches_dense_resampling():
    rng = np.random.default_rng(0)
    for _ in range(20):
        poly = rng.uniform(0, 100, size=(10, 2))
        ours = sample_stroke_points(poly)
        ref, _ = dense_resample(poly, 5)
        for a, b in zip(ours, ref):
            assert abs(arc_fraction(poly, a) - arc_fraction(poly, b)) <= 1e-4
        # exact fractions for our samples
        fr = [arc_fraction(poly, p) for p in ours]
        npt.assert_allclose(fr, [0, 0.25, 0.5, 0.75, 1.0], atol=1e-6)


# --- shape context ---------------------------------------------------------


def test_shape_context_empty_and_bad_scale():
    npt.assert_array_equal(shape_context([0, 0], np.zeros((0, 2)), 1.0), np.zeros(60))
    with pytest.raises(ShapeFeatureError):
        shape_context([0, 0], [[1, 0]], 0.0)


def test_shape_context_east_at_unit_distance():
    h = shape_context([0, 0], [[2.5, 0]], 2.5)
    # r/scale = 1 sits in radial bin 3 of the edges 1/8 * 16^(i/5)
    assert h.sum() == 1
    assert h[3 * 12 + 0] == 1


def test_shape_context_near_and_far_clamp():
    h = shape_context([0, 0], [[0.01, 0], [100, 0]], 1.0)
    assert h[0] == 1 and h[4 * 12] == 1


@given(st.integers(0, 2**31 - 1), st.integers(0, 30))
def test_shape_context_matches_loop_oracle(seed, n):
    rng = np.random.default_rng(seed)
    refs = rng.normal(size=(n, 2)) * 3
    p = rng.normal(size=2)
    scale = float(rng.uniform(0.5, 4))
    h = shape_context(p, refs, scale)
    npt.assert_array_equal(h, shape_context_naive(p, refs, scale))
    assert h.sum() == n


# --- descriptors -----------------------------------------------------------


def test_one_stroke_blocks_sum_to_four():
    s = Sketch.from_polylines([[[0, 0], [10, 3], [20, 0]]])
    d = sketch_descriptors(s)
    assert d.shape == (1, DESCRIPTOR_DIM)
    npt.assert_array_equal(d.reshape(5, 60).sum(1), 4)


def test_descriptor_needs_spread():
    with pytest.raises(ShapeFeatureError):
        sketch_descriptors(Sketch.from_polylines([[[1, 1]], [[1, 1]]]))


@given(st.integers(0, 2**31 - 1))
def test_descriptor_invariances(seed):
    rng = np.random.default_rng(seed)
    s = random_sketch(rng)
    d = sketch_descriptors(s)
    # integer offsets keep every coordinate difference exact in binary floating point
    t = s.map_points(lambda p: p + np.array([64.0, -128.0]))
    npt.assert_array_equal(sketch_descriptors(t), d)
    big = s.map_points(lambda p: p * 2.0)
    npt.assert_allclose(sketch_descriptors(big), d, atol=1e-9)
    assert d.shape == (s.n_strokes, 300)
    npt.assert_array_equal(d.reshape(s.n_strokes * 5, 60).sum(1), 5 * s.n_strokes - 1)


def test_stroke_descriptor_rows():
    rng = np.random.default_rng(1)
    s = random_sketch(rng)
    d = sketch_descriptors(s)
    npt.assert_array_equal(stroke_descriptor(s.strokes[2], s), d[2])
    other = random_sketch(rng)
    with pytest.raises(ShapeFeatureError):
        stroke_descriptor(other.strokes[0], s)


def test_mean_pairwise_distance():
    assert mean_pairwise_distance(np.array([[0.0, 0.0], [3.0, 4.0]])) == 5.0
    assert mean_pairwise_distance(np.zeros((1, 2))) == 0.0


# --- codebook --------------------------------------------------------------


def test_codebook_of_sample_size_is_the_sample():
    X = np.random.default_rng(0).normal(size=(7, 3))
    cb = build_codebook(X, 7, seed=3)
    npt.assert_array_equal(np.sort(cb.centers, axis=0), np.sort(X, axis=0))


def test_codebook_errors():
    with pytest.raises(ShapeFeatureError):
        build_codebook(np.zeros((3, 2)), 4)
    with pytest.raises(ShapeFeatureError):
        build_codebook(np.zeros((5, 2)), 2)


def test_lloyd_matches_naive_oracle():
    rng = np.random.default_rng(5)
    X = np.concatenate([rng.normal(loc=c, size=(14, 2)) for c in ([0, 0], [5, 5], [0, 6])])[:40]
    init = kmeans_pp_init(X, 3, np.random.default_rng(2))
    centers, labels, trace, converged = lloyd(X, init, 100)
    ref_c, ref_l, ref_inertia = lloyd_naive(X, init, 100)
    assert converged
    npt.assert_array_equal(labels, ref_l)
    npt.assert_allclose(centers, ref_c, atol=1e-12)
    assert abs(trace[-1] - ref_inertia) <= 1e-9


@given(st.integers(0, 2**31 - 1), st.integers(2, 12))
def test_kmeans_properties(seed, M):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(60, 4))
    cb = build_codebook(X, M, seed=seed)
    tr = np.array(cb.inertia)
    assert np.all(np.diff(tr) <= 1e-9 * tr[0])
    if cb.converged:
        lab = np.argmin(((X[:, None] - cb.centers[None]) ** 2).sum(-1), axis=1)
        for m in range(M):
            if np.any(lab == m):
                npt.assert_allclose(cb.centers[m], X[lab == m].mean(0), atol=1e-9)
    assert len(np.unique(cb.centers, axis=0)) == M


def test_empty_cluster_reseeded_from_farthest_point():
    X = np.array([[0.0], [1.0], [10.0]])
    centers, labels, _, _ = lloyd(X, np.array([[0.5], [100.0]]), 5)
    # the far center attracts nothing and jumps to the worst-fit point
    assert sorted(centers.ravel().tolist()) == [0.5, 10.0]


def test_codebook_file_round_trip(tmp_path):
    cb = build_codebook(np.random.default_rng(1).normal(size=(30, 6)), 5, seed=9)
    save_codebook(cb, tmp_path / "cb.bin")
    back = load_codebook(tmp_path / "cb.bin")
    npt.assert_array_equal(back.centers, cb.centers.astype(np.float32))
    assert back.seed == 9
    text = (tmp_path / "cb.bin").read_bytes().split(b"\n\n", 1)[0].decode()
    assert "M = 5" in text and "d = 6" in text


# --- LLC -------------------------------------------------------------------


def test_llc_exact_atom():
    B = np.random.default_rng(0).normal(size=(12, 6))
    code = llc_encode(B[7], Codebook(B), k=1)
    npt.assert_array_equal(code.indices, [7])
    npt.assert_array_equal(code.weights, [1.0])


def test_nearest_ties_prefer_lower_index():
    C = np.array([[1.0, 0], [0, 1.0], [-1.0, 0], [5, 5]])
    npt.assert_array_equal(nearest_centers(np.zeros(2), C, 3), [0, 1, 2])


def test_llc_too_few_centers():
    with pytest.raises(ShapeFeatureError):
        llc_encode(np.zeros(3), np.zeros((2, 3)), k=5)


def residual(st, nb, w):
    return float(((st - nb.T @ w) ** 2).sum())


def test_llc_kkt_and_random_probes():
    rng = np.random.default_rng(7)
    B = rng.normal(size=(12, 6))
    st = rng.normal(size=6)
    code = llc_encode(st, Codebook(B), k=3)
    nb = B[code.indices]
    npt.assert_allclose(code.weights, kkt_solve(st, nb), atol=1e-8)
    assert abs(code.weights.sum() - 1) <= 1e-9
    probes = rng.normal(size=(10000, 3)) * 2
    probes += (1 - probes.sum(1, keepdims=True)) / 3
    best = residual(st, nb, code.weights)
    assert all(best <= residual(st, nb, w) + 1e-12 for w in probes)


@given(st.integers(0, 2**31 - 1))
def test_llc_weights_sum_to_one(seed):
    rng = np.random.default_rng(seed)
    d, M = int(rng.integers(1, 11)), int(rng.integers(5, 21))
    B = rng.normal(size=(M, d))
    code = llc_encode(rng.normal(size=d), Codebook(B), k=5)
    assert abs(code.weights.sum() - 1) <= 1e-9
    assert len(set(code.indices.tolist())) == 5


def test_regularised_llc_is_close_but_damped():
    rng = np.random.default_rng(3)
    nb = rng.normal(size=(3, 8))
    st = rng.normal(size=8)
    exact = constrained_weights(st, nb)
    damped = constrained_weights(st, nb, reg=1e-4)
    assert abs(damped.sum() - 1) <= 1e-12
    assert residual(st, nb, exact) <= residual(st, nb, damped)
    npt.assert_allclose(damped, exact, atol=1e-2)


# --- pooling ---------------------------------------------------------------


def test_pool_single_scatter_and_max():
    c = SparseCode(np.array([3, 5]), np.array([0.2, 0.8]))
    npt.assert_array_equal(pool_shape_feature([c], 7), [0, 0, 0, 0.2, 0, 0.8, 0])
    d = SparseCode(np.array([3, 1]), np.array([0.6, 0.4]))
    assert pool_shape_feature([c, d], 7)[3] == 0.6
    with pytest.raises(ShapeFeatureError):
        pool_shape_feature([], 7)


def test_pool_signed_weights_take_componentwise_max():
    a = SparseCode(np.array([0, 1]), np.array([-0.5, 1.5]))
    b = SparseCode(np.array([0, 2]), np.array([-0.2, 1.2]))
    npt.assert_array_equal(pool_shape_feature([a, b], 4), [-0.2, 1.5, 1.2, 0.0])


@given(st.permutations(range(4)))
def test_pool_order_invariant(perm):
    rng = np.random.default_rng(0)
    codes = [SparseCode(rng.choice(10, 3, replace=False), rng.normal(size=3)) for _ in range(4)]
    npt.assert_array_equal(pool_shape_feature(codes, 10), pool_shape_feature([codes[i] for i in perm], 10))


def test_shape_feature_dimension_is_codebook_size():
    rng = np.random.default_rng(2)
    desc = np.concatenate([sketch_descriptors(random_sketch(rng, 6)) for _ in range(10)])
    cb = build_codebook(desc, 20, seed=0)
    for n in (1, 3, 9):
        s = random_sketch(rng, n) if n > 1 else Sketch.from_polylines([[[0, 0], [5, 5], [9, 0]]])
        assert shape_feature(s, cb).shape == (20,)
