import math

import numpy as np
import numpy.testing as npt
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sketchdual.cnn import CnnConfig, CnnParams, ConvSpec, cnn_forward
from sketchdual.fusion import (
    SEQ_LEN,
    FeatureConfig,
    FeatureSequence,
    FusionConfig,
    FusionParams,
    TrainConfig,
    build_feature_sequence,
    fusion_forward,
    fusion_grad_check,
    loss_and_grads,
    predict,
    predict_batch,
    stack_sequences,
    sum_pool,
    tiny_config,
    train,
)
from sketchdual.shape import build_codebook, shape_feature, sketch_descriptors
from sketchdual.sketch import normalize_sketch, rasterize, split_stroke_groups
from sketchdual.synth import synth_generate

FCFG = FeatureConfig(raster_size=20, crop=16)


@pytest.fixture(scope="module")
def parts():
    sketches = [normalize_sketch(s) for s in synth_generate(3, 4, seed=1)]
    desc = np.concatenate([sketch_descriptors(s) for s in sketches])
    cb = build_codebook(desc, 10, seed=0)
    cfg = CnnConfig(16, (ConvSpec(4, 3, pool=(2, 2)), ConvSpec(4, 3, pool=(2, 2))), (8, 6), 3)
    cnn = CnnParams.init(cfg, np.random.default_rng(0))
    return sketches, cb, cnn


def test_sequence_lengths_and_group_blocks(parts):
    sketches, cb, cnn = parts
    for s in sketches[:4]:
        seq = build_feature_sequence(s, cb, cnn, FCFG)
        assert seq.texture.shape == (50, 6)
        assert seq.shape.shape == (50, 10)
        for g in range(5):
            block = seq.shape[10 * g : 10 * g + 10]
            npt.assert_array_equal(block, np.broadcast_to(block[0], block.shape))
        npt.assert_array_equal(seq.shape[40], shape_feature(s, cb))


def test_single_stroke_sketch_has_full_sequence(parts):
    _, cb, cnn = parts
    from sketchdual.sketch import Sketch

    s = normalize_sketch(Sketch.from_polylines([[[0, 0], [30, 10], [60, 0]]]))
    seq = build_feature_sequence(s, cb, cnn, FCFG)
    assert len(seq.texture) == len(seq.shape) == 50


def test_texture_positions_recomputed(parts):
    sketches, cb, cnn = parts
    s = sketches[5]
    seq = build_feature_sequence(s, cb, cnn, FCFG)
    full = rasterize(split_stroke_groups(s)[4], 20)
    # steps 41 and 43: top-left and bottom-left crops of the full sketch
    npt.assert_allclose(seq.texture[40], cnn_forward(full[:16, :16], cnn), atol=1e-12)
    npt.assert_allclose(seq.texture[42], cnn_forward(full[4:, :16], cnn), atol=1e-12)
    npt.assert_allclose(seq.texture[41], cnn_forward(full[:, ::-1][:16, :16], cnn), atol=1e-12)


def test_precomputed_texture_bypasses_cnn(parts):
    sketches, cb, _ = parts
    tex = np.random.default_rng(0).normal(size=(50, 7))
    seq = build_feature_sequence(sketches[0], cb, None, FCFG, texture=tex)
    npt.assert_array_equal(seq.texture, tex)
    with pytest.raises(ValueError):
        build_feature_sequence(sketches[0], cb, None, FCFG, texture=tex[:49])


def test_feature_sequence_lengths_must_match():
    with pytest.raises(ValueError):
        FeatureSequence(np.zeros((50, 2)), np.zeros((49, 3)))


# --- forward / prediction ----------------------------------------------------


def random_seq(cfg, rng, T=SEQ_LEN):
    return FeatureSequence(rng.normal(size=(T, cfg.texture_dim)), np.abs(rng.normal(size=(T, cfg.shape_dim))))


def test_zero_params_predict_class_zero():
    cfg = FusionConfig(6, 10, 4)
    p = FusionParams.zeros(cfg)
    pred = fusion_forward(random_seq(cfg, np.random.default_rng(0)), p)
    npt.assert_array_equal(pred.per_step, 0)
    npt.assert_array_equal(pred.summed, 0)
    assert pred.cls == 0


def saturated_params(cfg, rows):
    """Fusion hidden state pinned at exactly 1, so every y_t equals the row sums of W_hy."""
    p = FusionParams.zeros(cfg)
    p.fusion.b_z[:] = 50.0
    p.fusion.b_h[:] = 50.0
    p.fusion.W_hy[:] = 0
    for c, v in rows.items():
        p.fusion.W_hy[c, 0] = v
    return p


def test_one_hot_outputs_and_tie_break():
    cfg = FusionConfig(3, 4, 5)
    seq = random_seq(cfg, np.random.default_rng(1))
    pred = fusion_forward(seq, saturated_params(cfg, {3: 1.0}))
    npt.assert_array_equal(pred.per_step, np.tile(np.eye(5)[3], (50, 1)))
    assert pred.cls == 3
    assert predict(seq, saturated_params(cfg, {1: 2.0, 4: 2.0, 0: 1.0})) == 1


def test_summed_is_exact_resummation_and_argmax_scan():
    cfg = tiny_config(seq_len=50)
    p = FusionParams.init(cfg, np.random.default_rng(2))
    for seed in range(5):
        pred = fusion_forward(random_seq(cfg, np.random.default_rng(seed)), p)
        resum = np.zeros(cfg.classes)
        for row in pred.per_step:
            resum = resum + row
        npt.assert_allclose(pred.summed, resum, atol=1e-12)
        best = 0
        for c in range(cfg.classes):
            if pred.summed[c] > pred.summed[best]:
                best = c
        assert pred.cls == best


@given(st.integers(0, 2**31 - 1), st.floats(0.1, 100))
def test_argmax_invariant_to_uniform_shift_and_permutation(seed, c):
    rng = np.random.default_rng(seed)
    Y = rng.normal(size=(50, 4))
    S = sum_pool(Y)
    shifted = sum_pool(Y + c)
    npt.assert_allclose(shifted, S + 50 * c, rtol=1e-12, atol=1e-9)
    assert np.argmax(shifted) == np.argmax(S)
    assert np.argmax(sum_pool(Y[rng.permutation(50)])) == np.argmax(S)


def test_batched_prediction_matches_single():
    cfg = tiny_config(seq_len=50)
    p = FusionParams.init(cfg, np.random.default_rng(3))
    seqs = [random_seq(cfg, np.random.default_rng(s)) for s in range(4)]
    cls, S = predict_batch(*stack_sequences(seqs), p)
    for i, seq in enumerate(seqs):
        pred = fusion_forward(seq, p)
        assert cls[i] == pred.cls
        npt.assert_allclose(S[i], pred.summed, atol=1e-12)


def test_dimension_mismatch():
    cfg = FusionConfig(3, 4, 2)
    p = FusionParams.zeros(cfg)
    with pytest.raises(ValueError):
        fusion_forward(FeatureSequence(np.zeros((50, 5)), np.zeros((50, 4))), p)


def test_shape_off_runs_and_ignores_shape():
    cfg = tiny_config(seq_len=50, use_shape=False)
    p = FusionParams.init(cfg, np.random.default_rng(4))
    a = random_seq(cfg, np.random.default_rng(5))
    b = FeatureSequence(a.texture, a.shape * 100 + 3)
    pa, pb = fusion_forward(a, p), fusion_forward(b, p)
    assert np.all(np.isfinite(pa.per_step))
    npt.assert_array_equal(pa.per_step, pb.per_step)


def test_normalized_sum_option():
    cfg = tiny_config(seq_len=50, normalized_sum=True)
    p = FusionParams.init(cfg, np.random.default_rng(6))
    pred = fusion_forward(random_seq(cfg, np.random.default_rng(7)), p)
    assert pred.summed.sum() == pytest.approx(50.0)


def test_concatenation_width():
    cfg = FusionConfig(5, 7, 3, hidden_texture=6, hidden_shape=9, hidden_fusion=4)
    p = FusionParams.init(cfg, np.random.default_rng(0))
    assert p.fusion.n_in == 15
    assert p.fusion.n_out == 3
    assert p.texture.n_out == p.shape.n_out == 0


# --- gradients ---------------------------------------------------------------


def test_tiny_gradcheck():
    assert fusion_grad_check(tiny_config()) <= 1e-4


@pytest.mark.parametrize(
    "changes", [{"time_weights": True}, {"use_texture": False}, {"use_shape": False}, {"normalized_sum": True}]
)
def test_gradcheck_variants(changes):
    assert fusion_grad_check(tiny_config(**changes), seed=2) <= 1e-4


def test_gradcheck_catches_scaled_gradient(monkeypatch):
    import sketchdual.fusion as fusion

    real = fusion.loss_and_grads

    def corrupted(*a):
        loss, grads, Y = real(*a)
        return loss, {k: 1.01 * v for k, v in grads.items()}, Y

    monkeypatch.setattr(fusion, "loss_and_grads", corrupted)
    assert fusion.fusion_grad_check(tiny_config()) >= 1e-3


# --- training ----------------------------------------------------------------


def toy_data(cfg, n, seed):
    rng = np.random.default_rng(seed)
    y = np.arange(n) % cfg.classes
    Xt = rng.normal(size=(cfg.seq_len, n, cfg.texture_dim)) * 0.3
    Xs = np.abs(rng.normal(size=(cfg.seq_len, n, cfg.shape_dim))) * 0.3
    Xt[:, np.arange(n), y] += 1.0  # class signal in the texture stream
    return Xt, Xs, y


def test_initial_loss_near_log_classes():
    cfg = FusionConfig(8, 12, 5, 16, 16, 16, seq_len=50)
    data = toy_data(cfg, 40, 0)
    res = train(data, toy_data(cfg, 10, 1), cfg, TrainConfig(epochs=0))
    assert abs(res.trace[0]["train_loss"] - math.log(5)) <= 0.1 * math.log(5)


def test_training_learns_and_is_deterministic():
    cfg = tiny_config()
    tr, va = toy_data(cfg, 30, 0), toy_data(cfg, 9, 1)
    hyper = TrainConfig(lr=0.1, batch=10, epochs=40, seed=3)
    a = train(tr, va, cfg, hyper)
    b = train(tr, va, cfg, hyper)
    assert [r["train_loss"] for r in a.trace] == [r["train_loss"] for r in b.trace]
    for k, v in a.params.flat().items():
        assert v.tobytes() == b.params.flat()[k].tobytes()
    assert a.trace[-1]["train_acc"] >= 0.95
    assert a.trace[-1]["train_loss"] < a.trace[0]["train_loss"]
    best = min(a.trace, key=lambda r: r["val_loss"])
    assert best["epoch"] == a.best_epoch


def test_loss_is_mean_per_step_cross_entropy():
    cfg = tiny_config()
    p = FusionParams.init(cfg, np.random.default_rng(0))
    Xt, Xs, y = toy_data(cfg, 4, 2)
    loss, _, Y = loss_and_grads(Xt, Xs, y, p)
    manual = 0.0
    for t in range(cfg.seq_len):
        for b in range(4):
            z = Y[t, b] - Y[t, b].max()
            manual += -(z[y[b]] - math.log(np.exp(z).sum()))
    assert loss == pytest.approx(manual / (cfg.seq_len * 4), rel=1e-12)


def test_train_rejects_empty_split():
    cfg = tiny_config()
    tr = toy_data(cfg, 6, 0)
    empty = (tr[0][:, :0], tr[1][:, :0], tr[2][:0])
    with pytest.raises(ValueError):
        train(tr, empty, cfg, TrainConfig(epochs=1))


def test_disabled_stream_gets_no_gradient():
    cfg = tiny_config(use_shape=False)
    p = FusionParams.init(cfg, np.random.default_rng(0))
    Xt, Xs, y = toy_data(cfg, 4, 0)
    _, grads, _ = loss_and_grads(Xt, Xs, y, p)
    for k, v in grads.items():
        if k.startswith("shape_gru."):
            npt.assert_array_equal(v, 0)
    assert any(np.abs(v).max() > 0 for k, v in grads.items() if k.startswith("texture_gru."))
