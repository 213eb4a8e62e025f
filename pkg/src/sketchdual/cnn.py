"""SAN-style convolutional texture network.

Five ReLU convolutions (max-pooled after the 1st, 2nd and 5th), then ReLU fully
connected layers and a linear class layer. The activation of the last hidden
fully connected layer is the texture feature.
"""

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .container import read_container, write_container
from .kernels import col2im, im2col, maxpool, maxpool_backward, out_size
from .nn import clip_by_global_norm, glorot, save_checkpoint, load_checkpoint, softmax_xent

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ConvSpec:
    out: int
    kernel: int
    stride: int = 1
    pad: int = 0
    pool: tuple = None  # (window, stride) or None


@dataclass(frozen=True)
class CnnConfig:
    input_size: int
    convs: tuple
    fc: tuple  # hidden fully connected widths; the last is the feature layer
    classes: int
    in_channels: int = 1

    @property
    def feature_dim(self):
        return self.fc[-1]

    def conv_output_shape(self):
        c, s = self.in_channels, self.input_size
        for spec in self.convs:
            s = out_size(s + 2 * spec.pad, spec.kernel, spec.stride)
            if spec.pool:
                s = out_size(s, *spec.pool)
            c = spec.out
            if s < 1:
                raise ValueError("convolution stack shrinks the input below one pixel")
        return c, s, s

    def param_shapes(self):
        shapes = {}
        c = self.in_channels
        for i, spec in enumerate(self.convs):
            shapes[f"conv{i}_W"] = (spec.out, c, spec.kernel, spec.kernel)
            shapes[f"conv{i}_b"] = (spec.out,)
            c = spec.out
        width = int(np.prod(self.conv_output_shape()))
        for i, d in enumerate(self.fc):
            shapes[f"fc{i}_W"] = (d, width)
            shapes[f"fc{i}_b"] = (d,)
            width = d
        shapes["out_W"] = (self.classes, width)
        shapes["out_b"] = (self.classes,)
        return shapes

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        convs = tuple(ConvSpec(**{**c, "pool": tuple(c["pool"]) if c.get("pool") else None}) for c in d["convs"])
        return cls(d["input_size"], convs, tuple(d["fc"]), d["classes"], d.get("in_channels", 1))


def desk_config(classes, input_size=64, feature_dim=64):
    """64x64 input, channels (16, 32, 32, 64, 64), 2x2 pools after conv 1, 2 and 5."""
    return CnnConfig(
        input_size,
        (
            ConvSpec(16, 5, pool=(2, 2)),
            ConvSpec(32, 3, pool=(2, 2)),
            ConvSpec(32, 3),
            ConvSpec(64, 3),
            ConvSpec(64, 3, pool=(2, 2)),
        ),
        (256, feature_dim),
        classes,
    )


def full_config(classes=250):
    """Single-scale Sketch-A-Net layout on 225x225 crops with 512-d features."""
    return CnnConfig(
        225,
        (
            ConvSpec(64, 15, stride=3, pool=(3, 2)),
            ConvSpec(128, 5, pool=(3, 2)),
            ConvSpec(256, 3, pad=1),
            ConvSpec(256, 3, pad=1),
            ConvSpec(256, 3, pad=1, pool=(3, 2)),
        ),
        (512, 512),
        classes,
    )


@dataclass
class CnnParams:
    config: CnnConfig
    arrays: dict = field(default_factory=dict)

    @classmethod
    def init(cls, config, rng):
        arrays = {}
        for name, shape in config.param_shapes().items():
            arrays[name] = glorot(shape, rng) if name.endswith("_W") else np.zeros(shape)
        return cls(config, arrays)

    @classmethod
    def zeros(cls, config):
        return cls(config, {k: np.zeros(s) for k, s in config.param_shapes().items()})

    def copy(self):
        return CnnParams(self.config, {k: v.copy() for k, v in self.arrays.items()})


def _as_batch(x, config):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        x = x[None, None]
    elif x.ndim == 3:
        x = x[:, None]
    if x.ndim != 4 or x.shape[1:] != (config.in_channels, config.input_size, config.input_size):
        raise ValueError(
            f"expected bitmaps of {config.in_channels}x{config.input_size}x{config.input_size}, got {x.shape}"
        )
    return x


def conv2d_forward(x, W, b, stride=1, pad=0):
    """Cross-correlation of ``(N, C, H, W)`` with kernels ``(O, C, k, k)``; returns ``(out, cols)``."""
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    o, _, kh, kw = W.shape
    cols = im2col(x, kh, kw, stride)
    oh, ow = out_size(x.shape[2], kh, stride), out_size(x.shape[3], kw, stride)
    out = (W.reshape(o, -1) @ cols + b[:, None]).reshape(o, x.shape[0], oh, ow)
    return np.ascontiguousarray(out.transpose(1, 0, 2, 3)), cols


def conv2d_backward(dout, cols, x_shape, W, stride=1, pad=0):
    """Gradients ``(dx, dW, db)`` for :func:`conv2d_forward`; ``x_shape`` is the unpadded input shape."""
    o = dout.shape[1]
    d2 = np.ascontiguousarray(dout.transpose(1, 0, 2, 3)).reshape(o, -1)
    dW = (d2 @ cols.T).reshape(W.shape)
    db = d2.sum(axis=1)
    dcols = W.reshape(o, -1).T @ d2
    padded = (x_shape[0], x_shape[1], x_shape[2] + 2 * pad, x_shape[3] + 2 * pad)
    dx = col2im(dcols, padded, W.shape[2], W.shape[3], stride)
    if pad:
        dx = dx[:, :, pad:-pad, pad:-pad]
    return dx, dW, db


def cnn_forward(x, params, mode="features", return_cache=False):
    """Texture features (``mode="features"``) or class logits (``mode="logits"``).

    ``x`` is one bitmap ``(H, W)`` or a batch ``(N, H, W)``; outputs keep the batch axis
    only when the input had one.
    """
    if mode not in ("features", "logits"):
        raise ValueError(f"unknown mode {mode!r}")
    cfg = params.config
    single = np.ndim(x) == 2
    h = _as_batch(x, cfg)
    a = params.arrays
    cache = {"mode": mode, "single": single, "conv": [], "fc": []}
    for i, spec in enumerate(cfg.convs):
        in_shape = h.shape
        z, cols = conv2d_forward(h, a[f"conv{i}_W"], a[f"conv{i}_b"], spec.stride, spec.pad)
        h = np.maximum(z, 0.0)
        pool = None
        if spec.pool:
            pre_shape = h.shape
            h, arg = maxpool(h, *spec.pool)
            pool = (arg, pre_shape)
        cache["conv"].append((in_shape, cols, z > 0, pool))
    cache["flat_shape"] = h.shape
    h = h.reshape(h.shape[0], -1)
    for i in range(len(cfg.fc)):
        inp = h
        z = h @ a[f"fc{i}_W"].T + a[f"fc{i}_b"]
        h = np.maximum(z, 0.0)
        cache["fc"].append((inp, z > 0))
    if mode == "logits":
        cache["out_in"] = h
        h = h @ a["out_W"].T + a["out_b"]
    out = h[0] if single else h
    return (out, cache) if return_cache else out


def cnn_backward(dout, cache, params):
    """Parameter gradients given the upstream gradient of :func:`cnn_forward`'s output."""
    cfg = params.config
    a = params.arrays
    grads = {}
    g = np.asarray(dout, dtype=np.float64)
    if cache["single"]:
        g = g[None]
    if cache["mode"] == "logits":
        grads["out_W"] = g.T @ cache["out_in"]
        grads["out_b"] = g.sum(axis=0)
        g = g @ a["out_W"]
    else:
        grads["out_W"] = np.zeros_like(a["out_W"])
        grads["out_b"] = np.zeros_like(a["out_b"])
    for i in range(len(cfg.fc) - 1, -1, -1):
        inp, mask = cache["fc"][i]
        g = g * mask
        grads[f"fc{i}_W"] = g.T @ inp
        grads[f"fc{i}_b"] = g.sum(axis=0)
        g = g @ a[f"fc{i}_W"]
    g = g.reshape(cache["flat_shape"])
    for i in range(len(cfg.convs) - 1, -1, -1):
        spec = cfg.convs[i]
        in_shape, cols, mask, pool = cache["conv"][i]
        if pool is not None:
            arg, pre_shape = pool
            g = maxpool_backward(g, arg, pre_shape[2], pre_shape[3])
        g = g * mask
        g, dW, db = conv2d_backward(g, cols, in_shape, a[f"conv{i}_W"], spec.stride, spec.pad)
        grads[f"conv{i}_W"] = dW
        grads[f"conv{i}_b"] = db
    return {k: grads[k] for k in a}


def extract_features(bitmaps, params, batch=64):
    """Features for a stack of bitmaps ``(N, H, W)``, evaluated in fixed-size chunks."""
    bitmaps = np.asarray(bitmaps, dtype=np.float64)
    out = np.empty((len(bitmaps), params.config.feature_dim))
    for s in range(0, len(bitmaps), batch):
        out[s : s + batch] = cnn_forward(bitmaps[s : s + batch], params, "features")
    return out


def pretrain_texture(bitmaps, labels, config, epochs=30, lr=0.02, batch=32, seed=0, clip=5.0):
    """Train the CNN as a classifier with minibatch SGD; returns ``(params, trace)``.

    ``trace`` holds the mean training loss and accuracy of every epoch.
    """
    bitmaps = np.asarray(bitmaps, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if len(bitmaps) == 0:
        raise ValueError("cannot pretrain on an empty dataset")
    rng = np.random.default_rng(seed)
    params = CnnParams.init(config, rng)
    trace = []
    for epoch in range(epochs):
        order = rng.permutation(len(bitmaps))
        total, correct = 0.0, 0
        for s in range(0, len(order), batch):
            idx = order[s : s + batch]
            logits, cache = cnn_forward(bitmaps[idx], params, "logits", return_cache=True)
            loss, dlogits = softmax_xent(logits, labels[idx])
            total += float(loss.sum())
            correct += int((logits.argmax(axis=1) == labels[idx]).sum())
            grads = cnn_backward(dlogits / len(idx), cache, params)
            clip_by_global_norm(grads, clip)
            for k, v in params.arrays.items():
                v -= lr * grads[k]
        trace.append({"epoch": epoch + 1, "loss": total / len(order), "accuracy": correct / len(order)})
        log.info("cnn epoch %d loss %.4f acc %.3f", epoch + 1, trace[-1]["loss"], trace[-1]["accuracy"])
    return params, trace


def save_cnn(params, path, meta=None):
    header = {"cnn_config": params.config.to_dict(), **(meta or {})}
    save_checkpoint(path, {"cnn": params.arrays}, header, kind="cnn")


def load_cnn(path):
    groups, header = load_checkpoint(path, kind="cnn")
    return CnnParams(CnnConfig.from_dict(header["cnn_config"]), groups["cnn"])


def write_feature_file(path, rows, meta=None):
    """Feature rows ``(count, dim)``; for sequences, 50 consecutive rows per sketch."""
    rows = np.asarray(rows)
    write_container(path, "features", {"count": int(rows.shape[0]), "dim": int(rows.shape[1]), **(meta or {})}, [rows])


def read_feature_file(path):
    header, payload = read_container(path, "features")
    rows = payload.astype(np.float64).reshape(header["count"], header["dim"])
    return rows, header
