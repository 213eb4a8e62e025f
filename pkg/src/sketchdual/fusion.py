"""Dual texture/shape GRUs fused by a third GRU, classified by sum-pooling.

At every step ``t`` the texture GRU and the shape GRU each consume their own
feature; their hidden states are concatenated and fed to the fusion GRU whose
readout ``y_t`` is a class-score vector. A sketch's class is the argmax of
``sum_t y_t``.
"""

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .cnn import extract_features
from .nn import (
    GruParams,
    PlateauSchedule,
    bptt,
    clip_by_global_norm,
    grad_check,
    gru_forward,
    sgd_step,
    softmax,
    softmax_xent,
)
from .shape import shape_feature
from .sketch import N_CROPS, N_GROUPS, rasterize, split_stroke_groups, ten_crop_sequence

log = logging.getLogger(__name__)

SEQ_LEN = N_GROUPS * N_CROPS


@dataclass
class FeatureSequence:
    texture: np.ndarray  # (T, texture_dim)
    shape: np.ndarray  # (T, M)
    label: object = None

    def __post_init__(self):
        self.texture = np.asarray(self.texture, dtype=np.float64)
        self.shape = np.asarray(self.shape, dtype=np.float64)
        if len(self.texture) != len(self.shape):
            raise ValueError("texture and shape sequences differ in length")


@dataclass
class FeatureConfig:
    raster_size: int = 72
    crop: int = 64
    line_width: float = 2.0
    llc_k: int = 5
    llc_reg: float = 0.0


def texture_sequence(sketch, cnn, config=None):
    """``(50, D)`` CNN features of the ten crops of each of the five stroke groups."""
    config = config or FeatureConfig()
    crops = np.concatenate(
        [
            ten_crop_sequence(rasterize(g, config.raster_size, config.line_width), config.crop)
            for g in split_stroke_groups(sketch)
        ]
    )
    return extract_features(crops, cnn)


def build_feature_sequence(sketch, codebook, cnn, config=None, texture=None):
    """Fifty paired (texture, shape) features: 5 stroke groups x 10 crops.

    ``texture`` may supply precomputed ``(50, D)`` texture rows, in which case
    ``cnn`` is not used. The shape feature of a group is repeated over its 10 steps.
    """
    config = config or FeatureConfig()
    groups = split_stroke_groups(sketch)
    shapes = [shape_feature(g, codebook, config.llc_k, config.llc_reg) for g in groups]
    if texture is None:
        texture = texture_sequence(sketch, cnn, config)
    texture = np.asarray(texture, dtype=np.float64)
    if len(texture) != SEQ_LEN:
        raise ValueError(f"expected {SEQ_LEN} texture rows, got {len(texture)}")
    shape = np.repeat(np.stack(shapes), N_CROPS, axis=0)
    return FeatureSequence(texture, shape, sketch.label)


# --------------------------------------------------------------------------
# model


@dataclass
class FusionConfig:
    texture_dim: int
    shape_dim: int
    classes: int
    hidden_texture: int = 32
    hidden_shape: int = 32
    hidden_fusion: int = 32
    use_texture: bool = True
    use_shape: bool = True
    time_weights: bool = False
    normalized_sum: bool = False
    seq_len: int = SEQ_LEN


@dataclass
class FusionParams:
    config: FusionConfig
    texture: GruParams
    shape: GruParams
    fusion: GruParams
    time_w: np.ndarray = None

    @classmethod
    def init(cls, config, rng):
        c = config
        tex = GruParams.init(c.texture_dim, c.hidden_texture, 0, rng)
        shp = GruParams.init(c.shape_dim, c.hidden_shape, 0, rng)
        fus = GruParams.init(c.hidden_texture + c.hidden_shape, c.hidden_fusion, c.classes, rng)
        tw = np.ones(c.seq_len) if c.time_weights else None
        return cls(config, tex, shp, fus, tw)

    @classmethod
    def zeros(cls, config):
        c = config
        return cls(
            config,
            GruParams.zeros(c.texture_dim, c.hidden_texture, 0),
            GruParams.zeros(c.shape_dim, c.hidden_shape, 0),
            GruParams.zeros(c.hidden_texture + c.hidden_shape, c.hidden_fusion, c.classes),
            np.ones(c.seq_len) if c.time_weights else None,
        )

    def groups(self):
        g = {
            "texture_gru": self.texture.named(),
            "shape_gru": self.shape.named(),
            "fusion_gru": self.fusion.named(),
        }
        if self.time_w is not None:
            g["time_weights"] = {"w": self.time_w}
        return g

    def flat(self):
        """``{"group.name": array}`` views for optimisers and gradient checks."""
        return {f"{g}.{k}": v for g, arrs in self.groups().items() for k, v in arrs.items()}

    def copy(self):
        return FusionParams(
            self.config,
            self.texture.copy(),
            self.shape.copy(),
            self.fusion.copy(),
            None if self.time_w is None else self.time_w.copy(),
        )

    @classmethod
    def from_groups(cls, config, groups):
        tw = groups.get("time_weights", {}).get("w")
        return cls(
            config,
            GruParams(**groups["texture_gru"]),
            GruParams(**groups["shape_gru"]),
            GruParams(**groups["fusion_gru"]),
            tw,
        )


@dataclass
class Prediction:
    per_step: np.ndarray  # (T, C)
    summed: np.ndarray  # (C,)
    cls: int


def _as_batch(a):
    a = np.asarray(a, dtype=np.float64)
    return a[:, None, :] if a.ndim == 2 else a


def _forward(Xt, Xs, p):
    """Batched forward on ``(T, B, D)`` / ``(T, B, M)``; returns ``(Y, caches)``."""
    c = p.config
    if Xt.shape[2] != c.texture_dim or Xs.shape[2] != c.shape_dim:
        raise ValueError(
            f"feature dims {Xt.shape[2]}/{Xs.shape[2]} do not match model {c.texture_dim}/{c.shape_dim}"
        )
    if Xt.shape[:2] != Xs.shape[:2]:
        raise ValueError("texture and shape batches differ in shape")
    # a disabled stream feeds zeros to the fusion layer and receives no gradient
    T, B = Xt.shape[:2]
    if c.use_texture:
        Ht, _, ct = gru_forward(Xt, p.texture)
    else:
        Ht, ct = np.zeros((T, B, c.hidden_texture)), None
    if c.use_shape:
        Hs, _, cs = gru_forward(Xs, p.shape)
    else:
        Hs, cs = np.zeros((T, B, c.hidden_shape)), None
    _, Y, cf = gru_forward(np.concatenate([Ht, Hs], axis=2), p.fusion)
    Yw = Y * p.time_w[:, None, None] if p.time_w is not None else Y
    return Yw, (ct, cs, cf, Y)


def _backward(dYw, caches, p):
    ct, cs, cf, Y = caches
    grads = {}
    if p.time_w is not None:
        grads["time_weights.w"] = (dYw * Y).sum(axis=(1, 2))
        dY = dYw * p.time_w[:, None, None]
    else:
        dY = dYw
    gf, dF = bptt(dY, cf, p.fusion)
    nt = p.config.hidden_texture
    streams = (("texture_gru", ct, p.texture, dF[:, :, :nt]), ("shape_gru", cs, p.shape, dF[:, :, nt:]))
    for name, cache, gp, dH in streams:
        g = gp.zeros_like() if cache is None else bptt(None, cache, gp, dH=dH)[0]
        for k, v in g.named().items():
            grads[f"{name}.{k}"] = v
    for k, v in gf.named().items():
        grads[f"fusion_gru.{k}"] = v
    return grads


def sum_pool(per_step, normalized=False):
    """Class scores summed over steps (axis 0), optionally after a per-step softmax."""
    return (softmax(per_step) if normalized else per_step).sum(axis=0)


def fusion_forward(seq, p):
    """Per-step scores, their sum and the argmax class (lowest index on ties)."""
    Y, _ = _forward(_as_batch(seq.texture), _as_batch(seq.shape), p)
    per_step = Y[:, 0]
    summed = sum_pool(per_step, p.config.normalized_sum)
    return Prediction(per_step, summed, int(np.argmax(summed)))


def predict(seq, p):
    return fusion_forward(seq, p).cls


def predict_batch(Xt, Xs, p):
    """Class indices and summed scores for stacked sequences ``(T, B, .)``."""
    Y, _ = _forward(Xt, Xs, p)
    S = sum_pool(Y, p.config.normalized_sum)
    return np.argmax(S, axis=1), S


def loss_and_grads(Xt, Xs, labels, p):
    """Mean per-step cross-entropy over steps and batch, and its gradients."""
    Y, caches = _forward(Xt, Xs, p)
    T, B, _ = Y.shape
    labels = np.asarray(labels)
    losses, dY = softmax_xent(Y, np.broadcast_to(labels, (T, B)))
    grads = _backward(dY / (T * B), caches, p)
    return float(losses.mean()), grads, Y


def stack_sequences(seqs):
    """``(T, N, D)``, ``(T, N, M)`` arrays from a list of :class:`FeatureSequence`."""
    Xt = np.stack([s.texture for s in seqs], axis=1)
    Xs = np.stack([s.shape for s in seqs], axis=1)
    return Xt, Xs


# --------------------------------------------------------------------------
# training


@dataclass
class TrainConfig:
    lr: float = 0.002
    batch: int = 100
    epochs: int = 200
    seed: int = 0
    patience: int = 10
    clip: float = 5.0
    eval_batch: int = 256


@dataclass
class TrainResult:
    params: FusionParams
    trace: list = field(default_factory=list)
    best_epoch: int = 0
    final: FusionParams = None


def _evaluate_arrays(Xt, Xs, y, p, batch):
    total, correct = 0.0, 0
    for s in range(0, Xt.shape[1], batch):
        sl = slice(s, s + batch)
        Y, _ = _forward(Xt[:, sl], Xs[:, sl], p)
        T = Y.shape[0]
        losses, _ = softmax_xent(Y, np.broadcast_to(y[sl], (T, len(y[sl]))))
        total += float(losses.mean(axis=0).sum())
        correct += int((np.argmax(sum_pool(Y, p.config.normalized_sum), axis=1) == y[sl]).sum())
    n = Xt.shape[1]
    return total / n, correct / n


def train(train_data, val_data, model_config, hyper=None):
    """Minibatch SGD on the mean per-step cross-entropy.

    ``train_data`` / ``val_data`` are ``(Xt, Xs, labels)`` triples of stacked arrays.
    The learning rate halves when validation loss stalls for ``patience`` epochs,
    gradients are clipped to global norm ``clip``, and the parameters with the
    lowest validation loss are returned. ``trace[0]`` describes the untrained model.
    """
    hyper = hyper or TrainConfig()
    Xt, Xs, y = train_data
    Vt, Vs, vy = val_data
    y, vy = np.asarray(y), np.asarray(vy)
    if Xt.shape[1] == 0 or Vt.shape[1] == 0:
        raise ValueError("training and validation splits must be nonempty")
    rng = np.random.default_rng(hyper.seed)
    p = FusionParams.init(model_config, rng)
    sched = PlateauSchedule(hyper.lr, hyper.patience)
    lr = hyper.lr

    def record(epoch):
        tl, ta = _evaluate_arrays(Xt, Xs, y, p, hyper.eval_batch)
        vl, va = _evaluate_arrays(Vt, Vs, vy, p, hyper.eval_batch)
        row = {"epoch": epoch, "lr": lr, "train_loss": tl, "train_acc": ta, "val_loss": vl, "val_acc": va}
        trace.append(row)
        return row

    trace = []
    best = record(0)
    best_params, best_epoch = p.copy(), 0
    n = Xt.shape[1]
    for epoch in range(1, hyper.epochs + 1):
        order = rng.permutation(n)
        for s in range(0, n, hyper.batch):
            idx = order[s : s + hyper.batch]
            _, grads, _ = loss_and_grads(Xt[:, idx], Xs[:, idx], y[idx], p)
            clip_by_global_norm(grads, hyper.clip)
            sgd_step(p.flat(), grads, lr)
        row = record(epoch)
        if row["val_loss"] < best["val_loss"]:
            best, best_params, best_epoch = row, p.copy(), epoch
        lr = sched.step(row["val_loss"])
        if epoch % 10 == 0:
            log.info(
                "epoch %d lr %.4g train %.4f/%.3f val %.4f/%.3f",
                epoch, row["lr"], row["train_loss"], row["train_acc"], row["val_loss"], row["val_acc"],
            )
    return TrainResult(best_params, trace, best_epoch, p)


def fusion_config_dict(config):
    return asdict(config)


def tiny_config(**changes):
    """Texture dim 8, codebook 12, hidden 4, 10 steps, 3 classes."""
    base = dict(
        texture_dim=8, shape_dim=12, classes=3, hidden_texture=4, hidden_shape=4, hidden_fusion=4, seq_len=10
    )
    return FusionConfig(**{**base, **changes})


def fusion_grad_check(config=None, batch=2, seed=0, eps=1e-5, max_coords=None):
    """Max relative error of the fusion model's analytic gradients on random data."""
    config = config or tiny_config()
    rng = np.random.default_rng(seed)
    p = FusionParams.init(config, rng)
    # move biases and time weights away from their symmetric init values
    for arr in p.flat().values():
        arr += rng.normal(scale=0.1, size=arr.shape)
    Xt = rng.normal(size=(config.seq_len, batch, config.texture_dim))
    Xs = np.abs(rng.normal(size=(config.seq_len, batch, config.shape_dim)))
    y = rng.integers(0, config.classes, size=batch)
    flat = p.flat()

    def closure():
        loss, grads, _ = loss_and_grads(Xt, Xs, y, p)
        return loss, grads

    return grad_check(closure, flat, eps, max_coords, seed)
