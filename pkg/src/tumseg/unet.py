"""A small 2D U-Net in plain numpy with hand-written backpropagation.

Layout of a depth-3 network with base width ``w``::

    enc1  conv(k0) + conv         w     @ H
    enc2  conv + conv             2w    @ H/2   (after 2x2 max-pool)
    bott  conv + conv             4w    @ H/4
    up2   nearest x2 + conv       2w    @ H/2, concat enc2 -> conv + conv
    up1   nearest x2 + conv       w     @ H,   concat enc1 -> conv + conv
    head  1x1 conv                C

Every conv except the head is followed by ReLU; all convs are 3x3 except the
first (``initial_kernel``) and the head. Same-padding throughout. ``depth=0``
degenerates to the 1x1 head alone, which is handy for gradient checks.

Internally activations are NHWC; the public API takes and returns NCHW.
"""
from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeMismatch, StaleCache


@dataclass(frozen=True)
class UNetConfig:
    num_classes: int = 4
    initial_kernel: int = 3
    base_width: int = 16
    depth: int = 3
    in_channels: int = 4
    seed: int = 0

    def __post_init__(self):
        if self.initial_kernel not in (3, 5):
            raise ValueError(f"initial_kernel must be 3 or 5, got {self.initial_kernel}")
        if self.base_width < 1:
            raise ValueError("base_width must be >= 1")
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        if self.depth < 0 or self.in_channels < 1:
            raise ValueError("bad depth / in_channels")

    @property
    def downsample(self):
        return 2 ** max(self.depth - 1, 0)


@dataclass
class UNetParams:
    config: UNetConfig
    tensors: dict = field(default_factory=dict)  # name -> array, declaration order

    def copy(self):
        return UNetParams(self.config, {k: v.copy() for k, v in self.tensors.items()})

    def astype(self, dtype):
        return UNetParams(self.config, {k: v.astype(dtype) for k, v in self.tensors.items()})

    @property
    def dtype(self):
        return next(iter(self.tensors.values())).dtype

    def n_parameters(self):
        return sum(v.size for v in self.tensors.values())


def layer_specs(config):
    """List of (name, kernel, c_in, c_out) in declaration order."""
    specs = []
    widths = [config.base_width * 2 ** i for i in range(config.depth)]
    c_in = config.in_channels

    def add(name, k, ci, co):
        # first conv of the net gets the configurable kernel
        if not specs and k == 3:
            k = config.initial_kernel
        specs.append((name, k, ci, co))

    for level in range(config.depth - 1):
        add(f"enc{level + 1}.conv1", 3, c_in, widths[level])
        add(f"enc{level + 1}.conv2", 3, widths[level], widths[level])
        c_in = widths[level]
    if config.depth >= 1:
        add("bottleneck.conv1", 3, c_in, widths[-1])
        add("bottleneck.conv2", 3, widths[-1], widths[-1])
        c_in = widths[-1]
    for level in reversed(range(config.depth - 1)):
        add(f"dec{level + 1}.up", 3, c_in, widths[level])
        add(f"dec{level + 1}.conv1", 3, 2 * widths[level], widths[level])
        add(f"dec{level + 1}.conv2", 3, widths[level], widths[level])
        c_in = widths[level]
    specs.append(("head", 1, c_in, config.num_classes))
    return specs


def init_params(config, dtype=np.float32):
    """He-normal weights (fan-in), zero biases; deterministic in ``config.seed``."""
    rng = np.random.default_rng(config.seed)
    tensors = {}
    for name, k, ci, co in layer_specs(config):
        std = np.sqrt(2.0 / (k * k * ci))
        tensors[f"{name}.w"] = (rng.standard_normal((k, k, ci, co)) * std).astype(dtype)
        tensors[f"{name}.b"] = np.zeros(co, dtype=dtype)
    return UNetParams(config, tensors)


# --- primitive layers (NHWC) -------------------------------------------------

def _conv_forward(x, w, b):
    k, _, ci, co = w.shape
    B, H, W, _ = x.shape
    if k == 1:
        cols = x
    else:
        p = k // 2
        xp = np.pad(x, ((0, 0), (p, p), (p, p), (0, 0)))
        cols = np.empty((B, H, W, k * k * ci), dtype=x.dtype)
        for i in range(k):
            for j in range(k):
                idx = (i * k + j) * ci
                cols[..., idx:idx + ci] = xp[:, i:i + H, j:j + W, :]
    out = cols.reshape(-1, k * k * ci) @ w.reshape(k * k * ci, co)
    out += b
    return out.reshape(B, H, W, co), cols


def _conv_backward(dout, cols, w):
    k, _, ci, co = w.shape
    B, H, W, _ = dout.shape
    d2 = dout.reshape(-1, co)
    dw = (cols.reshape(-1, k * k * ci).T @ d2).reshape(w.shape)
    db = d2.sum(axis=0)
    dcols = (d2 @ w.reshape(k * k * ci, co).T).reshape(B, H, W, k * k * ci)
    if k == 1:
        return dcols, dw, db
    p = k // 2
    dxp = np.zeros((B, H + 2 * p, W + 2 * p, ci), dtype=dout.dtype)
    for i in range(k):
        for j in range(k):
            idx = (i * k + j) * ci
            dxp[:, i:i + H, j:j + W, :] += dcols[..., idx:idx + ci]
    return dxp[:, p:p + H, p:p + W, :], dw, db


def _pool_forward(x):
    B, H, W, C = x.shape
    win = x.reshape(B, H // 2, 2, W // 2, 2, C).transpose(0, 1, 3, 5, 2, 4)
    win = win.reshape(B, H // 2, W // 2, C, 4)
    arg = win.argmax(axis=-1)  # first max wins ties
    out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]
    return out, arg


def _pool_backward(dout, arg):
    B, H2, W2, C = dout.shape
    win = np.zeros((B, H2, W2, C, 4), dtype=dout.dtype)
    np.put_along_axis(win, arg[..., None], dout[..., None], axis=-1)
    win = win.reshape(B, H2, W2, C, 2, 2).transpose(0, 1, 4, 2, 5, 3)
    return win.reshape(B, 2 * H2, 2 * W2, C)


def _upsample(x):
    return x.repeat(2, axis=1).repeat(2, axis=2)


def _upsample_backward(dout):
    B, H, W, C = dout.shape
    return dout.reshape(B, H // 2, 2, W // 2, 2, C).sum(axis=(2, 4))


def softmax(logits, axis=-1):
    z = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


# --- network -----------------------------------------------------------------

def forward(params, inputs):
    """Run the network on NCHW ``inputs``.

    Returns ``(probs, cache)`` with ``probs`` of shape (B, C, H, W); ``cache``
    holds what ``backward`` needs.
    """
    cfg = params.config
    t = params.tensors
    x = np.asarray(inputs)
    if x.ndim != 4 or x.shape[1] != cfg.in_channels:
        raise ShapeMismatch(f"expected (B, {cfg.in_channels}, H, W), got {x.shape}")
    B, _, H, W = x.shape
    if B < 1 or H % cfg.downsample or W % cfg.downsample:
        raise ShapeMismatch(f"H, W must be divisible by {cfg.downsample}, got {(H, W)}")
    x = np.ascontiguousarray(x.transpose(0, 2, 3, 1), dtype=params.dtype)

    tape = []  # (op, name, saved) in execution order

    def conv_relu(h, name):
        out, cols = _conv_forward(h, t[f"{name}.w"], t[f"{name}.b"])
        mask = out > 0
        tape.append(("conv_relu", name, (cols, mask)))
        return out * mask

    skips = []
    h = x
    for level in range(cfg.depth - 1):
        h = conv_relu(h, f"enc{level + 1}.conv1")
        h = conv_relu(h, f"enc{level + 1}.conv2")
        skips.append(h)
        h, arg = _pool_forward(h)
        tape.append(("pool", level, arg))
    if cfg.depth >= 1:
        h = conv_relu(h, "bottleneck.conv1")
        h = conv_relu(h, "bottleneck.conv2")
    for level in reversed(range(cfg.depth - 1)):
        h = _upsample(h)
        tape.append(("upsample", None, None))
        h = conv_relu(h, f"dec{level + 1}.up")
        skip = skips[level]
        h = np.concatenate([skip, h], axis=-1)
        tape.append(("concat", level, skip.shape[-1]))
        h = conv_relu(h, f"dec{level + 1}.conv1")
        h = conv_relu(h, f"dec{level + 1}.conv2")
    logits, cols = _conv_forward(h, t["head.w"], t["head.b"])
    tape.append(("conv", "head", cols))
    probs = softmax(logits, axis=-1)
    cache = {"config": cfg, "tape": tape, "out_shape": (B, cfg.num_classes, H, W)}
    return np.ascontiguousarray(probs.transpose(0, 3, 1, 2)), cache


def dprobs_to_dlogits(probs, dprobs, axis=1):
    """Chain a gradient through softmax along ``axis``."""
    return probs * (dprobs - np.sum(probs * dprobs, axis=axis, keepdims=True))


def backward(params, cache, dlogits):
    """Backpropagate d(loss)/d(logits), NCHW, into parameter gradients."""
    cfg = params.config
    dlogits = np.asarray(dlogits)
    if cache.get("config") != cfg or tuple(dlogits.shape) != tuple(cache["out_shape"]):
        raise StaleCache(
            f"cache from {cache.get('config')} with output {cache.get('out_shape')}, "
            f"got params {cfg} and gradient {dlogits.shape}"
        )
    t = params.tensors
    grads = {}
    g = np.ascontiguousarray(dlogits.transpose(0, 2, 3, 1), dtype=params.dtype)
    skip_grads = {}
    for op, name, saved in reversed(cache["tape"]):
        if op == "conv":
            g, grads[f"{name}.w"], grads[f"{name}.b"] = _conv_backward(g, saved, t[f"{name}.w"])
        elif op == "conv_relu":
            cols, mask = saved
            g, grads[f"{name}.w"], grads[f"{name}.b"] = _conv_backward(g * mask, cols, t[f"{name}.w"])
        elif op == "concat":
            n_skip = saved
            skip_grads[name] = g[..., :n_skip]
            g = g[..., n_skip:]
        elif op == "upsample":
            g = _upsample_backward(g)
        elif op == "pool":
            # the pooled activation also fed the decoder through a skip
            g = _pool_backward(g, saved) + skip_grads.pop(name)
    return {k: grads[k] for k in t}


# --- checkpoints -------------------------------------------------------------

CKPT_MAGIC = b"TSGUNET\0"
CKPT_VERSION = 1


def save_params(params, path_or_file):
    """Write a little-endian checkpoint.

    Layout: magic (8 bytes), u32 version, i32 depth, in_channels, num_classes,
    initial_kernel, base_width, i64 seed, u32 tensor count, then per tensor:
    u16 name length, utf-8 name, u8 ndim, u32 dims, float32 data (C order).
    """
    cfg = params.config
    buf = io.BytesIO()
    buf.write(CKPT_MAGIC)
    buf.write(struct.pack("<I5iqI", CKPT_VERSION, cfg.depth, cfg.in_channels, cfg.num_classes,
                          cfg.initial_kernel, cfg.base_width, cfg.seed, len(params.tensors)))
    for name, arr in params.tensors.items():
        raw = name.encode()
        buf.write(struct.pack("<H", len(raw)) + raw)
        buf.write(struct.pack(f"<B{arr.ndim}I", arr.ndim, *arr.shape))
        buf.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    data = buf.getvalue()
    if hasattr(path_or_file, "write"):
        path_or_file.write(data)
    else:
        with open(path_or_file, "wb") as fh:
            fh.write(data)


def load_params(path_or_file):
    from .errors import BadMagic, TruncatedFile

    if hasattr(path_or_file, "read"):
        data = path_or_file.read()
    else:
        with open(path_or_file, "rb") as fh:
            data = fh.read()
    if data[:8] != CKPT_MAGIC:
        raise BadMagic("not a U-Net checkpoint")
    try:
        off = 8
        version, depth, cin, ncls, k0, width, seed, count = struct.unpack_from("<I5iqI", data, off)
        off += struct.calcsize("<I5iqI")
        if version != CKPT_VERSION:
            raise BadMagic(f"unsupported checkpoint version {version}")
        cfg = UNetConfig(num_classes=ncls, initial_kernel=k0, base_width=width,
                         depth=depth, in_channels=cin, seed=seed)
        tensors = {}
        for _ in range(count):
            (n,) = struct.unpack_from("<H", data, off)
            off += 2
            name = data[off:off + n].decode()
            off += n
            (ndim,) = struct.unpack_from("<B", data, off)
            off += 1
            shape = struct.unpack_from(f"<{ndim}I", data, off)
            off += 4 * ndim
            size = int(np.prod(shape)) * 4
            if off + size > len(data):
                raise TruncatedFile(f"tensor {name} truncated")
            tensors[name] = np.frombuffer(data, dtype="<f4", count=size // 4, offset=off) \
                .reshape(shape).astype(np.float32)
            off += size
    except struct.error as exc:
        raise TruncatedFile(str(exc)) from exc
    return UNetParams(cfg, tensors)


# --- verification ------------------------------------------------------------

def loss_and_grads(params, inputs, targets):
    """Soft CE+Dice loss of one batch and its parameter gradients."""
    from .loss import combined_loss

    probs, cache = forward(params, inputs)
    breakdown, dlogits = combined_loss(probs, targets, mode="soft", with_grad=True)
    return breakdown, backward(params, cache, dlogits)


def grad_check(config, inputs, targets, n_samples=200, step=1e-5, seed=0, floor=1e-8):
    """Max relative error between analytic and central-difference gradients.

    Runs in float64 on ``n_samples`` randomly drawn parameter entries (all
    entries when the net has fewer). Relative error is
    ``|a - n| / max(|a|, |n|, floor)``.
    """
    from .loss import combined_loss

    params = init_params(config, dtype=np.float64)
    # nonzero biases so no unit sits exactly on a ReLU kink at init
    rng = np.random.default_rng(seed)
    for name, arr in params.tensors.items():
        if name.endswith(".b"):
            arr[...] = rng.normal(0.0, 0.1, arr.shape)
    inputs = np.asarray(inputs, dtype=np.float64)
    _, grads = loss_and_grads(params, inputs, targets)

    def loss_at():
        return combined_loss(forward(params, inputs)[0], targets, mode="soft").total

    names = list(params.tensors)
    sizes = np.array([params.tensors[n].size for n in names])
    total = int(sizes.sum())
    picks = rng.choice(total, size=min(n_samples, total), replace=False)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    worst = 0.0
    for flat in np.sort(picks):
        t = int(np.searchsorted(offsets, flat, side="right") - 1)
        arr = params.tensors[names[t]].reshape(-1)
        i = flat - offsets[t]
        orig = arr[i]
        arr[i] = orig + step
        up = loss_at()
        arr[i] = orig - step
        down = loss_at()
        arr[i] = orig
        numeric = (up - down) / (2 * step)
        analytic = grads[names[t]].reshape(-1)[i]
        err = abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)
        worst = max(worst, err)
    return worst
