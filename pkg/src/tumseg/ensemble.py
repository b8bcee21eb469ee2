"""Subject-level inference with the triplanar ensemble and fold voting."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import EmptyModelSet, ShapeMismatch
from .planes import PLANES, Plane, SliceStack, assemble_probs, average_probs, extract_slices
from .unet import UNetParams, forward
from .volume import BACKGROUND, ED, ET, NCR, CropSpec

# which networks each ablation configuration uses
SUBSETS = {
    "A": ((Plane.AXIAL,), False),
    "AS": ((Plane.AXIAL, Plane.SAGITTAL), False),
    "TP": (PLANES, False),
    "TPTC": (PLANES, True),
}
_ALIASES = {"A+S": "AS", "TP+TC": "TPTC"}
SUBSET_LABELS = {"A": "A", "AS": "A+S", "TP": "TP", "TPTC": "TP+TC"}

# majority-vote tie priority when no probabilities are supplied
VOTE_PRIORITY = (ET, NCR, ED, BACKGROUND)


def canonical_subset(name):
    name = _ALIASES.get(name, name)
    if name not in SUBSETS:
        raise ValueError(f"unknown subset {name!r}; choose from {sorted(SUBSETS)}")
    return name


@dataclass
class ModelSet:
    axial: Optional[UNetParams] = None
    sagittal: Optional[UNetParams] = None
    coronal: Optional[UNetParams] = None
    tc: Optional[UNetParams] = None

    def __post_init__(self):
        for plane in PLANES:
            p = self.plane_model(plane)
            if p is not None and p.config.num_classes != 4:
                raise ShapeMismatch(f"{plane.value} model must have 4 classes")
        if self.tc is not None and self.tc.config.num_classes != 2:
            raise ShapeMismatch("TC model must have 2 classes")

    def plane_model(self, plane):
        return getattr(self, Plane(plane).value)


@dataclass
class SubjectPrediction:
    p_avg: np.ndarray  # (4, X, Y, Z)
    p_tc: Optional[np.ndarray]  # (2, X, Y, Z) or None
    labels: np.ndarray  # argmax of p_avg
    crop: Optional[CropSpec] = None


def predict_volume(params, data, plane, batch_size=8):
    """Slice ``data`` (4, X, Y, Z) along ``plane``, run the net, reassemble."""
    grid = data.shape[1:]
    stack = extract_slices(data, plane, grid=grid)
    out = []
    for start in range(0, len(stack), batch_size):
        probs, _ = forward(params, stack.slices[start:start + batch_size])
        out.append(probs)
    probs = SliceStack(plane, np.concatenate(out), stack.index)
    return assemble_probs(probs, plane, grid=grid)


def predict_subject(models, vol, subset="TPTC", batch_size=8, crop=None, memo=None):
    """Ensemble prediction for one preprocessed subject.

    ``memo`` (a dict) caches per-network probability volumes so several
    subsets of one model set can be scored without re-running the nets.
    """
    planes, use_tc = SUBSETS[canonical_subset(subset)]
    data = np.asarray(getattr(vol, "data", vol))
    chosen = [p for p in planes if models.plane_model(p) is not None]
    if len(chosen) != len(planes) or (use_tc and models.tc is None):
        raise EmptyModelSet(f"model set lacks networks required by subset {subset!r}")
    memo = {} if memo is None else memo

    def run(role, params, plane):
        if role not in memo:
            memo[role] = predict_volume(params, data, plane, batch_size)
        return memo[role]

    p_avg = average_probs([run(p.value, models.plane_model(p), p) for p in chosen])
    p_tc = run("tc", models.tc, Plane.AXIAL) if use_tc else None
    return SubjectPrediction(p_avg, p_tc, argmax_labels(p_avg), crop)


def argmax_labels(p):
    """Most probable class per voxel; ties go to the lowest class index."""
    return np.argmax(np.asarray(p), axis=0).astype(np.uint8)


def derive_tc_mask(p_tc):
    """TC wherever its probability is at least the background's."""
    p_tc = np.asarray(p_tc)
    if p_tc.shape[0] != 2:
        raise ShapeMismatch(f"expected 2-class TC probabilities, got {p_tc.shape}")
    return p_tc[1] >= p_tc[0]


def majority_vote(label_maps, prob_maps=None, num_classes=4):
    """Per-voxel modal label across fold models.

    Ties go to the tied label with the largest summed probability when
    ``prob_maps`` is given, and otherwise (or if still tied) by the fixed
    priority ET > NCR/NET > ED > background.
    """
    maps = [np.asarray(m) for m in label_maps]
    if not maps:
        raise ShapeMismatch("need at least one label map")
    shape = maps[0].shape
    if any(m.shape != shape for m in maps):
        raise ShapeMismatch("label maps differ in shape")
    counts = np.zeros((num_classes,) + shape, dtype=np.int32)
    for m in maps:
        for c in range(num_classes):
            counts[c] += m == c
    tied = counts == counts.max(axis=0, keepdims=True)

    if prob_maps is not None:
        probs = [np.asarray(p) for p in prob_maps]
        if len(probs) != len(maps) or any(p.shape != (num_classes,) + shape for p in probs):
            raise ShapeMismatch("probability maps do not match label maps")
        summed = np.sum(probs, axis=0, dtype=np.float64)
        score = np.where(tied, summed, -np.inf)
        tied &= score == score.max(axis=0, keepdims=True)

    out = np.full(shape, 255, dtype=np.uint8)
    for c in reversed([c for c in VOTE_PRIORITY if c < num_classes]):
        out[tied[c]] = c  # later (higher-priority) classes overwrite
    return out


def fuse_fold_probs(prob_maps):
    """Alternative fold fusion: average probabilities then take the argmax."""
    return argmax_labels(average_probs(prob_maps))
