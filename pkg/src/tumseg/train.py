"""Adam with a step learning-rate schedule, online slice augmentation,
cross-validation folds and the per-network training loop."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import EmptyDataset, ShapeMismatch, TooFewSubjects
from .loss import combined_loss
from .unet import UNetConfig, backward, forward, init_params

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 8
    lr_initial: float = 1e-3
    lr_factor: float = 0.1
    lr_step_epochs: int = 2
    lr_floor: float = 1e-5
    epochs: int = 50
    adam_epsilon: float = 1e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    val_fraction: float = 0.10
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.lr_floor <= self.lr_initial:
            raise ValueError("need 0 < lr_floor <= lr_initial")
        if not 0 < self.val_fraction < 1:
            raise ValueError("val_fraction must be in (0, 1)")
        if self.batch_size < 1 or self.epochs < 0 or self.lr_step_epochs < 1:
            raise ValueError("bad batch_size / epochs / lr_step_epochs")


@dataclass(frozen=True)
class AugmentConfig:
    translate_range: tuple = (-10, 10)
    rotate_range: tuple = (-10.0, 10.0)
    noise_mean: float = 0.0
    noise_var_range: tuple = (0.01, 0.09)
    factor: int = 2

    def __post_init__(self):
        for lo, hi in (self.translate_range, self.rotate_range, self.noise_var_range):
            if lo > hi:
                raise ValueError("interval bounds out of order")
        if self.noise_var_range[0] < 0:
            raise ValueError("noise variance must be >= 0")
        if self.factor < 1:
            raise ValueError("augmentation factor must be >= 1")


def lr_at_epoch(cfg, epoch):
    """Learning rate for a 1-based epoch."""
    if epoch < 1:
        raise ValueError("epochs are 1-based")
    lr = cfg.lr_initial * cfg.lr_factor ** ((epoch - 1) // cfg.lr_step_epochs)
    return max(cfg.lr_floor, lr)


# --- Adam --------------------------------------------------------------------

@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0

    @classmethod
    def zeros_like(cls, params):
        return cls(
            m={k: np.zeros_like(a) for k, a in params.tensors.items()},
            v={k: np.zeros_like(a) for k, a in params.tensors.items()},
        )

    def copy(self):
        return AdamState({k: a.copy() for k, a in self.m.items()},
                         {k: a.copy() for k, a in self.v.items()}, self.step)


def adam_step(params, grads, state, lr, beta1=0.9, beta2=0.999, eps=1e-4, inplace=False):
    """One bias-corrected Adam update. Returns ``(params, state)``.

    Without ``inplace`` the inputs are left untouched.
    """
    if lr <= 0:
        raise ValueError("lr must be positive")
    if not inplace:
        params, state = params.copy(), state.copy()
    if not state.m:
        state.m = {k: np.zeros_like(a) for k, a in params.tensors.items()}
        state.v = {k: np.zeros_like(a) for k, a in params.tensors.items()}
    state.step += 1
    bc1 = 1.0 - beta1 ** state.step
    bc2 = 1.0 - beta2 ** state.step
    for name, p in params.tensors.items():
        g = grads[name]
        if g.shape != p.shape or state.m[name].shape != p.shape:
            raise ShapeMismatch(f"{name}: grad {g.shape}, param {p.shape}")
        m, v = state.m[name], state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        m_hat = m / bc1
        v_hat = v / bc2
        p -= (lr * m_hat / (np.sqrt(v_hat) + eps)).astype(p.dtype)
    return params, state


# --- augmentation --------------------------------------------------------------

def translate(image, labels, dx, dy):
    """Shift content by integer (dx, dy) along the two slice axes, zero-filled."""
    def shift(a):
        out = np.zeros_like(a)
        H, W = a.shape[-2:]
        if abs(dx) >= H or abs(dy) >= W:
            return out
        src_x = slice(max(0, -dx), min(H, H - dx))
        dst_x = slice(max(0, dx), min(H, H + dx))
        src_y = slice(max(0, -dy), min(W, W - dy))
        dst_y = slice(max(0, dy), min(W, W + dy))
        out[..., dst_x, dst_y] = a[..., src_x, src_y]
        return out
    return shift(image), shift(labels)


def rotate(image, labels, degrees):
    """Rotate about the slice centre: bilinear intensities, nearest labels."""
    if degrees == 0:
        return image.copy(), labels.copy()
    img = ndimage.rotate(image, degrees, axes=(-2, -1), reshape=False, order=1,
                         mode="constant", cval=0.0)
    lab = ndimage.rotate(labels, degrees, axes=(-2, -1), reshape=False, order=0,
                         mode="constant", cval=0)
    return img.astype(image.dtype), lab.astype(labels.dtype)


def augment_sample(image, labels, cfg, rng):
    """Apply one transformation, picked uniformly, to a (C, H, W) slice and
    its (H, W) label map."""
    choice = rng.integers(3)
    if choice == 0:
        lo, hi = cfg.translate_range
        dx, dy = (int(v) for v in rng.integers(int(lo), int(hi) + 1, size=2))
        return translate(image, labels, dx, dy)
    if choice == 1:
        return rotate(image, labels, float(rng.uniform(*cfg.rotate_range)))
    var = float(rng.uniform(*cfg.noise_var_range))
    noise = rng.normal(cfg.noise_mean, math.sqrt(var), size=image.shape)
    return (image + noise).astype(image.dtype), labels.copy()


# --- folds ---------------------------------------------------------------------

@dataclass
class FoldSplit:
    train: list
    val: list
    test: list


def make_folds(subject_ids, k=5, val_fraction=0.10, seed=0):
    """Shuffled k-fold partition of subjects into train / val / test.

    The first ``k - 1`` test sets hold ``n // k`` subjects and the last fold
    takes the remainder. Within each fold ``round(val_fraction * n_rest)``
    of the remaining subjects are held out for validation.
    """
    ids = list(subject_ids)
    n = len(ids)
    if k < 2 or n < k:
        raise TooFewSubjects(f"{n} subjects cannot fill {k} folds")
    order = np.random.default_rng(seed).permutation(n)
    shuffled = [ids[i] for i in order]
    size = n // k
    folds = []
    for f in range(k):
        stop = n if f == k - 1 else (f + 1) * size
        test = shuffled[f * size:stop]
        rest = shuffled[:f * size] + shuffled[stop:]
        n_val = int(math.floor(val_fraction * len(rest) + 0.5))
        if len(rest) - n_val < 1:
            raise TooFewSubjects("no training subjects left in a fold")
        folds.append(FoldSplit(train=rest[n_val:], val=rest[:n_val], test=test))
    return folds


# --- training loop ---------------------------------------------------------------

@dataclass
class EpochRecord:
    epoch: int
    split: str
    lr: float
    ce: float
    dice_term: float
    total: float


def _stream_items(n, aug):
    """Originals plus ``factor - 1`` fresh augmented copies each epoch.

    Every augmented sample later gets its own counter-based RNG stream keyed
    on (seed, epoch, copy, slice) so results do not depend on batch order.
    """
    idx = [(i, None) for i in range(n)]
    for copy in range(aug.factor - 1):
        idx.extend((i, copy) for i in range(n))
    return idx


def _materialise(images, labels, items, epoch, aug, seed):
    xs, ys = [], []
    for i, copy in items:
        if copy is None:
            xs.append(images[i])
            ys.append(labels[i])
        else:
            rng = np.random.default_rng([seed, epoch, copy, i])
            x, y = augment_sample(images[i], labels[i], aug, rng)
            xs.append(x)
            ys.append(y)
    return np.stack(xs), np.stack(ys)


def evaluate_loss(params, images, labels, batch_size=8):
    """Soft loss over a dataset, averaged over batches weighted by size."""
    if len(images) == 0:
        return None
    sums = np.zeros(3)
    for start in range(0, len(images), batch_size):
        x = images[start:start + batch_size]
        y = labels[start:start + batch_size]
        probs, _ = forward(params, x)
        lb = combined_loss(probs, y, mode="soft")
        sums += len(x) * np.array([lb.ce, lb.dice_term, lb.total])
    return sums / len(images)


def train_model(images, labels, unet_cfg, train_cfg=TrainConfig(), aug_cfg=AugmentConfig(),
                val_images=None, val_labels=None, max_steps=None, params=None, dtype=np.float32):
    """Train one U-Net on 2D slices.

    ``images`` is (N, 4, H, W), ``labels`` (N, H, W) class indices in
    ``range(unet_cfg.num_classes)``. Returns ``(params, history)`` where
    history holds one EpochRecord per epoch per split.
    """
    images = np.asarray(images)
    labels = np.asarray(labels)
    if len(images) == 0:
        raise EmptyDataset("no training slices")
    if images.shape[0] != labels.shape[0] or images.shape[2:] != labels.shape[1:]:
        raise ShapeMismatch(f"images {images.shape} vs labels {labels.shape}")
    if labels.max() >= unet_cfg.num_classes:
        raise ShapeMismatch("label index exceeds num_classes")

    params = params.copy() if params is not None else init_params(unet_cfg, dtype=dtype)
    state = AdamState.zeros_like(params)
    history = []
    steps = 0
    for epoch in range(1, train_cfg.epochs + 1):
        lr = lr_at_epoch(train_cfg, epoch)
        items = _stream_items(len(images), aug_cfg)
        order = np.random.default_rng([train_cfg.seed, epoch]).permutation(len(items))
        sums = np.zeros(3)
        seen = 0
        for start in range(0, len(order), train_cfg.batch_size):
            batch = [items[j] for j in order[start:start + train_cfg.batch_size]]
            x, y = _materialise(images, labels, batch, epoch, aug_cfg, train_cfg.seed)
            probs, cache = forward(params, x)
            lb, dlogits = combined_loss(probs, y, mode="soft", with_grad=True)
            grads = backward(params, cache, dlogits)
            adam_step(params, grads, state, lr, train_cfg.adam_beta1, train_cfg.adam_beta2,
                      train_cfg.adam_epsilon, inplace=True)
            sums += len(batch) * np.array([lb.ce, lb.dice_term, lb.total])
            seen += len(batch)
            steps += 1
            if max_steps is not None and steps >= max_steps:
                break
        history.append(EpochRecord(epoch, "train", lr, *(sums / seen)))
        if val_images is not None and len(val_images):
            history.append(EpochRecord(epoch, "val", lr,
                                       *evaluate_loss(params, val_images, val_labels,
                                                      train_cfg.batch_size)))
        log.info("epoch %d lr %.1e train %.4f", epoch, lr, history[-1].total)
        if max_steps is not None and steps >= max_steps:
            break
    return params, history


def write_history_csv(history, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "split", "lr", "ce", "dice_term", "total"])
        for r in history:
            w.writerow([r.epoch, r.split, f"{r.lr:.6g}", f"{r.ce:.6f}", f"{r.dice_term:.6f}",
                        f"{r.total:.6f}"])


def plane_unet_config(plane, base=UNetConfig()):
    """Network config for a plane model: 3x3 first kernel axially, 5x5 otherwise."""
    from dataclasses import replace

    from .planes import Plane

    if plane == "tc":
        return replace(base, num_classes=2, initial_kernel=3)
    plane = Plane(plane) if not isinstance(plane, Plane) else plane
    return replace(base, num_classes=4, initial_kernel=3 if plane == Plane.AXIAL else 5)
