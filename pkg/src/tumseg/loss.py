"""Cross-entropy plus Dice loss, in a hard (argmax) and a soft form.

The hard form scores the argmax label map and is only used for reporting.
The soft form puts the softmax probabilities in place of the label map and
is what training differentiates.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeMismatch

DICE_EPS = 1e-6
PROB_FLOOR = 1e-12


@dataclass
class LossBreakdown:
    ce: float
    dice_term: float
    total: float
    per_class_dice: np.ndarray


def _check(probs, targets):
    probs = np.asarray(probs)
    targets = np.asarray(targets)
    if probs.ndim != 4 or targets.shape != (probs.shape[0],) + probs.shape[2:]:
        raise ShapeMismatch(f"probs {probs.shape} vs targets {targets.shape}")
    return probs, targets


def one_hot(targets, num_classes, dtype=np.float64):
    """(B, H, W) class indices -> (B, C, H, W) indicator array."""
    targets = np.asarray(targets)
    return (targets[:, None] == np.arange(num_classes)[None, :, None, None]).astype(dtype)


def cross_entropy(probs, targets):
    """Mean over pixels of -log p(target), with p floored at 1e-12."""
    probs, targets = _check(probs, targets)
    p_true = np.take_along_axis(probs, targets[:, None].astype(np.intp), axis=1)[:, 0]
    return float(-np.mean(np.log(np.maximum(p_true, PROB_FLOOR))))


def dice_score_per_class(pred_mask, target_mask, eps=DICE_EPS):
    pred_mask = np.asarray(pred_mask, dtype=bool)
    target_mask = np.asarray(target_mask, dtype=bool)
    if pred_mask.shape != target_mask.shape:
        raise ShapeMismatch(f"{pred_mask.shape} vs {target_mask.shape}")
    inter = np.count_nonzero(pred_mask & target_mask)
    return (2.0 * inter + eps) / (np.count_nonzero(pred_mask) + np.count_nonzero(target_mask) + eps)


def combined_loss(probs, targets, mode="soft", with_grad=False):
    """CE + Dice loss over a batch.

    ``total = ce - mean_c(dice_c)``. With ``mode="soft"`` and ``with_grad``
    the gradient with respect to the logits is returned as well, i.e.
    ``(LossBreakdown, dlogits)``.
    """
    probs, targets = _check(probs, targets)
    C = probs.shape[1]
    if C < 2:
        raise ShapeMismatch("need at least two classes")
    ce = cross_entropy(probs, targets)
    y = one_hot(targets, C, dtype=probs.dtype)
    axes = (0, 2, 3)

    if mode == "hard":
        pred = probs.argmax(axis=1)
        dice = np.array([dice_score_per_class(pred == c, targets == c) for c in range(C)])
    elif mode == "soft":
        inter = np.sum(probs * y, axis=axes, dtype=np.float64)
        denom = np.sum(probs, axis=axes, dtype=np.float64) + np.sum(y, axis=axes) + DICE_EPS
        dice = (2.0 * inter + DICE_EPS) / denom
    else:
        raise ValueError(f"unknown mode {mode!r}")

    dice_term = -float(np.mean(dice))
    out = LossBreakdown(ce=ce, dice_term=dice_term, total=ce + dice_term, per_class_dice=dice)
    if not with_grad:
        return out
    if mode != "soft":
        raise ValueError("only the soft loss is differentiable")

    n = targets.size
    shape = (1, C, 1, 1)
    # d(dice_c)/dp_c(x) = (2 y (P+Y+eps) - (2 S + eps)) / (P+Y+eps)^2
    ddice = (2.0 * y * denom.reshape(shape) - (2.0 * inter + DICE_EPS).reshape(shape)) \
        / (denom ** 2).reshape(shape)
    dprobs = -ddice / C
    dlogits = probs * (dprobs - np.sum(probs * dprobs, axis=1, keepdims=True))
    # CE through softmax collapses to (p - y) / n. The floor only guards the
    # value; its gradient is passed straight through, otherwise a confidently
    # wrong pixel (p < floor) would get no gradient from either term.
    dlogits += (probs - y) / n
    return out, dlogits.astype(probs.dtype)
