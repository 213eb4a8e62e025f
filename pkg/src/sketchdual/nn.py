"""GRU layers, softmax cross-entropy, backpropagation through time and SGD.

Sequences are ``(T, B, features)`` arrays; a ``(T, features)`` array is treated as
a batch of one. Matrices act on column vectors (``W @ x``), so batched code
multiplies by the transpose.
"""

from dataclasses import dataclass, fields

import numpy as np

from .container import read_container, write_container

GATE_NAMES = ("W_xr", "W_xz", "W_xh", "W_hr", "W_hz", "U", "b_r", "b_z", "b_h", "W_hy")


def sigmoid(x):
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def glorot(shape, rng):
    fan_out, fan_in = shape[0], int(np.prod(shape[1:]))
    if len(shape) == 4:
        fan_out *= shape[2] * shape[3]
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=shape)


@dataclass
class GruParams:
    W_xr: np.ndarray
    W_xz: np.ndarray
    W_xh: np.ndarray
    W_hr: np.ndarray
    W_hz: np.ndarray
    U: np.ndarray
    b_r: np.ndarray
    b_z: np.ndarray
    b_h: np.ndarray
    W_hy: np.ndarray  # (out, hidden); out may be 0 for a layer read through its hidden state

    @classmethod
    def zeros(cls, n_in, n_hidden, n_out=0):
        shapes = cls.shapes(n_in, n_hidden, n_out)
        return cls(**{k: np.zeros(s) for k, s in shapes.items()})

    @classmethod
    def init(cls, n_in, n_hidden, n_out, rng):
        """Glorot-uniform matrices, zero biases."""
        p = cls.zeros(n_in, n_hidden, n_out)
        for name, arr in p.named().items():
            if arr.ndim == 2 and arr.size:
                arr[...] = glorot(arr.shape, rng)
        return p

    @staticmethod
    def shapes(n_in, n_hidden, n_out=0):
        return {
            "W_xr": (n_hidden, n_in),
            "W_xz": (n_hidden, n_in),
            "W_xh": (n_hidden, n_in),
            "W_hr": (n_hidden, n_hidden),
            "W_hz": (n_hidden, n_hidden),
            "U": (n_hidden, n_hidden),
            "b_r": (n_hidden,),
            "b_z": (n_hidden,),
            "b_h": (n_hidden,),
            "W_hy": (n_out, n_hidden),
        }

    @property
    def n_in(self):
        return self.W_xr.shape[1]

    @property
    def n_hidden(self):
        return self.W_xr.shape[0]

    @property
    def n_out(self):
        return self.W_hy.shape[0]

    def named(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def zeros_like(self):
        return GruParams(**{k: np.zeros_like(v) for k, v in self.named().items()})

    def copy(self):
        return GruParams(**{k: v.copy() for k, v in self.named().items()})

    def check(self):
        expected = self.shapes(self.n_in, self.n_hidden, self.n_out)
        for name, arr in self.named().items():
            if arr.shape != expected[name]:
                raise ValueError(f"{name} has shape {arr.shape}, expected {expected[name]}")


@dataclass
class GruCache:
    X: np.ndarray
    H_prev: np.ndarray
    R: np.ndarray
    Z: np.ndarray
    Hc: np.ndarray
    H: np.ndarray
    single: bool = False


def gru_step(x, h_prev, p):
    """One GRU update; returns ``(h, (r, z, h_candidate))``. Works on vectors or ``(B, n)`` rows."""
    if x.shape[-1] != p.n_in or h_prev.shape[-1] != p.n_hidden:
        raise ValueError(f"gru_step: got x {x.shape}, h {h_prev.shape} for params {p.n_in}->{p.n_hidden}")
    r = sigmoid(x @ p.W_xr.T + h_prev @ p.W_hr.T + p.b_r)
    z = sigmoid(x @ p.W_xz.T + h_prev @ p.W_hz.T + p.b_z)
    hc = np.tanh(x @ p.W_xh.T + (r * h_prev) @ p.U.T + p.b_h)
    h = (1.0 - z) * h_prev + z * hc
    return h, (r, z, hc)


def gru_forward(X, p, h0=None):
    """Run a sequence from ``h_0 = 0``; returns ``(H, Y, cache)`` with ``Y = H @ W_hy.T``."""
    X = np.asarray(X, dtype=np.float64)
    single = X.ndim == 2
    if single:
        X = X[:, None, :]
    if X.ndim != 3 or X.shape[0] == 0:
        raise ValueError("gru_forward needs a nonempty (T, [B,] n_in) sequence")
    if X.shape[2] != p.n_in:
        raise ValueError(f"input dim {X.shape[2]} != {p.n_in}")
    T, B, _ = X.shape
    nh = p.n_hidden
    H = np.empty((T, B, nh))
    H_prev = np.empty((T, B, nh))
    R = np.empty((T, B, nh))
    Z = np.empty((T, B, nh))
    Hc = np.empty((T, B, nh))
    # input projections for all steps at once
    ax_r = X @ p.W_xr.T + p.b_r
    ax_z = X @ p.W_xz.T + p.b_z
    ax_h = X @ p.W_xh.T + p.b_h
    h = np.zeros((B, nh)) if h0 is None else np.broadcast_to(h0, (B, nh)).copy()
    for t in range(T):
        H_prev[t] = h
        r = sigmoid(ax_r[t] + h @ p.W_hr.T)
        z = sigmoid(ax_z[t] + h @ p.W_hz.T)
        hc = np.tanh(ax_h[t] + (r * h) @ p.U.T)
        h = (1.0 - z) * h + z * hc
        R[t], Z[t], Hc[t], H[t] = r, z, hc, h
    Y = H @ p.W_hy.T
    cache = GruCache(X, H_prev, R, Z, Hc, H, single)
    if single:
        return H[:, 0], Y[:, 0], cache
    return H, Y, cache


def bptt(dY, cache, p, dH=None):
    """Reverse-mode gradients of a GRU sequence.

    ``dY`` is the loss gradient at each output ``y_t`` and ``dH`` (optional) an extra
    gradient at each hidden state ``h_t``. Returns ``(grads, dX)`` where ``grads`` is a
    :class:`GruParams` of parameter gradients.
    """
    X, Hp, R, Z, Hc, H = cache.X, cache.H_prev, cache.R, cache.Z, cache.Hc, cache.H
    T, B, nh = H.shape
    if dY is not None:
        dY = np.asarray(dY, dtype=np.float64).reshape(T, B, p.n_out)
    if dH is not None:
        dH = np.asarray(dH, dtype=np.float64).reshape(T, B, nh)
    g = p.zeros_like()
    dA_r = np.empty((T, B, nh))
    dA_z = np.empty((T, B, nh))
    dA_h = np.empty((T, B, nh))
    dh_next = np.zeros((B, nh))
    for t in range(T - 1, -1, -1):
        dh = dh_next.copy()
        if dY is not None and p.n_out:
            dh += dY[t] @ p.W_hy
        if dH is not None:
            dh += dH[t]
        r, z, hc, hp = R[t], Z[t], Hc[t], Hp[t]
        da_z = dh * (hc - hp) * z * (1.0 - z)
        da_h = dh * z * (1.0 - hc * hc)
        d_rh = da_h @ p.U
        da_r = d_rh * hp * r * (1.0 - r)
        dh_next = dh * (1.0 - z) + d_rh * r + da_z @ p.W_hz + da_r @ p.W_hr
        dA_r[t], dA_z[t], dA_h[t] = da_r, da_z, da_h
        g.U += da_h.T @ (r * hp)
    flat = lambda a: a.reshape(T * B, -1)
    Xf, Hpf = flat(X), flat(Hp)
    g.W_xr += flat(dA_r).T @ Xf
    g.W_xz += flat(dA_z).T @ Xf
    g.W_xh += flat(dA_h).T @ Xf
    g.W_hr += flat(dA_r).T @ Hpf
    g.W_hz += flat(dA_z).T @ Hpf
    g.b_r += dA_r.sum(axis=(0, 1))
    g.b_z += dA_z.sum(axis=(0, 1))
    g.b_h += dA_h.sum(axis=(0, 1))
    if dY is not None and p.n_out:
        g.W_hy += flat(dY).T @ flat(H)
    dX = dA_r @ p.W_xr + dA_z @ p.W_xz + dA_h @ p.W_xh
    return g, (dX[:, 0] if cache.single else dX)


def softmax(logits, axis=-1):
    z = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def softmax_xent(logits, target):
    """Cross-entropy of ``softmax(logits)`` against class ``target``; returns ``(loss, dloss/dlogits)``.

    Broadcasts over leading axes: ``logits (..., C)`` with integer ``target (...)``.
    """
    logits = np.asarray(logits, dtype=np.float64)
    target = np.asarray(target)
    if np.any(target >= logits.shape[-1]) or np.any(target < 0):
        raise ValueError("target class out of range")
    shifted = logits - logits.max(axis=-1, keepdims=True)
    logsum = np.log(np.exp(shifted).sum(axis=-1))
    picked = np.take_along_axis(shifted, target[..., None], axis=-1)[..., 0]
    loss = logsum - picked
    grad = np.exp(shifted - logsum[..., None])
    np.put_along_axis(grad, target[..., None], np.take_along_axis(grad, target[..., None], axis=-1) - 1.0, axis=-1)
    if loss.ndim == 0:
        return float(loss), grad
    return loss, grad


# --------------------------------------------------------------------------
# optimisation


def sgd_step(params, grads, lr):
    """In-place ``p <- p - lr * g`` over matching dicts of arrays; returns ``params``."""
    for name, p in params.items():
        p -= lr * grads[name]
    return params


def global_norm(grads):
    return float(np.sqrt(sum(float((g * g).sum()) for g in grads.values())))


def clip_by_global_norm(grads, max_norm):
    norm = global_norm(grads)
    if max_norm and norm > max_norm:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return norm


class PlateauSchedule:
    """Halve the learning rate when validation loss stalls for ``patience`` epochs."""

    def __init__(self, lr, patience=10, factor=0.5, min_lr=0.0):
        self.lr = lr
        self.patience = patience
        self.factor = factor
        self.min_lr = min_lr
        self.best = np.inf
        self.bad = 0

    def step(self, val_loss):
        if val_loss < self.best:
            self.best = val_loss
            self.bad = 0
        else:
            self.bad += 1
            if self.patience and self.bad >= self.patience:
                self.lr = max(self.lr * self.factor, self.min_lr)
                self.bad = 0
        return self.lr


def relative_error(a, n):
    return np.abs(a - n) / np.maximum(1e-12, np.abs(a) + np.abs(n))


def grad_check(closure, params, eps=1e-5, max_coords=None, seed=0):
    """Max relative error between analytic gradients and central differences.

    ``closure()`` must return ``(loss, grads)`` for the current contents of
    ``params`` (a dict of arrays it reads). Every coordinate is checked unless
    ``max_coords`` is set, in which case a seeded random subset of that many is used.
    """
    _, grads = closure()
    grads = {k: np.array(v, dtype=np.float64) for k, v in grads.items()}
    coords = [(name, i) for name, arr in params.items() for i in range(arr.size)]
    if max_coords is not None and len(coords) > max_coords:
        rng = np.random.default_rng(seed)
        pick = rng.choice(len(coords), size=max_coords, replace=False)
        coords = [coords[i] for i in np.sort(pick)]
    worst = 0.0
    for name, i in coords:
        flat = params[name].reshape(-1)
        old = flat[i]
        flat[i] = old + eps
        lp = closure()[0]
        flat[i] = old - eps
        lm = closure()[0]
        flat[i] = old
        num = (lp - lm) / (2.0 * eps)
        worst = max(worst, float(relative_error(grads[name].reshape(-1)[i], num)))
    return worst


# --------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path, groups, meta=None, kind="checkpoint"):
    """Write named groups of named arrays; order of dicts is the payload order."""
    layout = [[g, name, list(arr.shape)] for g, arrs in groups.items() for name, arr in arrs.items()]
    header = dict(meta or {})
    header["layout"] = layout
    write_container(path, kind, header, [arr for arrs in groups.values() for arr in arrs.values()])


def load_checkpoint(path, kind="checkpoint"):
    header, payload = read_container(path, kind)
    groups = {}
    pos = 0
    for g, name, shape in header.pop("layout"):
        size = int(np.prod(shape)) if shape else 1
        if pos + size > payload.size:
            raise ValueError(f"{path}: payload shorter than layout")
        groups.setdefault(g, {})[name] = payload[pos : pos + size].astype(np.float64).reshape(shape)
        pos += size
    if pos != payload.size:
        raise ValueError(f"{path}: payload longer than layout")
    return groups, header
