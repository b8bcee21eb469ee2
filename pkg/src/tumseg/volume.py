"""Volumetric types, label encodings, crop/pad to the standard grid and
intensity normalisation.

Label volumes are plain integer arrays of shape (X, Y, Z). Internally the
classes are contiguous so they can index a softmax axis directly::

    0 background, 1 NCR/NET, 2 ED, 3 ET

On disk the BraTS codes {0, 1, 2, 4} are used.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    GridTooDeep,
    GridTooSmall,
    NoBrainVoxels,
    ShapeMismatch,
    SpecMismatch,
    UnknownLabel,
)

MODALITIES = ("flair", "t1", "t1ce", "t2")

BACKGROUND, NCR, ED, ET = 0, 1, 2, 3
CLASS_NAMES = ("background", "NCR/NET", "ED", "ET")

STANDARD_GRID = (192, 192, 160)

_EXTERNAL_TO_INTERNAL = {0: 0, 1: 1, 2: 2, 4: 3}
_INTERNAL_TO_EXTERNAL = {v: k for k, v in _EXTERNAL_TO_INTERNAL.items()}


@dataclass(frozen=True)
class MultiModalVolume:
    """Four co-registered MR modalities, ``data[modality, x, y, z]``.

    Modality order is FLAIR, T1, T1-CE, T2. Non-brain voxels are exactly 0.
    """

    data: np.ndarray
    voxel_size: tuple = (1.0, 1.0, 1.0)

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 4 or data.shape[0] != len(MODALITIES):
            raise ShapeMismatch(f"expected (4, X, Y, Z) intensities, got {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ValueError("intensities must be finite")
        if len(self.voxel_size) != 3 or min(self.voxel_size) <= 0:
            raise ValueError(f"bad voxel size {self.voxel_size}")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "voxel_size", tuple(float(v) for v in self.voxel_size))

    @property
    def dims(self):
        return tuple(self.data.shape[1:])

    def brain_mask(self):
        return np.any(self.data != 0, axis=0)


@dataclass(frozen=True)
class CropSpec:
    x0: int
    y0: int
    pad_z_lo: int
    pad_z_hi: int
    original_dims: tuple
    grid: tuple = field(default=STANDARD_GRID)

    def __post_init__(self):
        X, Y, Z = self.original_dims
        gx, gy, gz = self.grid
        if not (0 <= self.x0 and self.x0 + gx <= X and 0 <= self.y0 and self.y0 + gy <= Y):
            raise SpecMismatch(f"crop window outside original grid: {self}")
        if self.pad_z_lo < 0 or self.pad_z_hi < 0 or self.pad_z_lo + Z + self.pad_z_hi != gz:
            raise SpecMismatch(f"z padding inconsistent with grid: {self}")

    def to_text(self):
        X, Y, Z = self.original_dims
        return (
            f"x0 = {self.x0}\ny0 = {self.y0}\n"
            f"pad_z_lo = {self.pad_z_lo}\npad_z_hi = {self.pad_z_hi}\n"
            f"original_dims = {X},{Y},{Z}\n"
            f"grid = {','.join(str(g) for g in self.grid)}\n"
        )

    @classmethod
    def from_text(cls, text):
        kv = {}
        for line in text.splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, value = line.partition("=")
            kv[key.strip()] = value.strip()
        triple = lambda s: tuple(int(v) for v in s.split(","))
        return cls(
            x0=int(kv["x0"]),
            y0=int(kv["y0"]),
            pad_z_lo=int(kv["pad_z_lo"]),
            pad_z_hi=int(kv["pad_z_hi"]),
            original_dims=triple(kv["original_dims"]),
            grid=triple(kv.get("grid", "192,192,160")),
        )


def check_labels(labels):
    """Raise UnknownLabel unless every voxel holds an internal code."""
    labels = np.asarray(labels)
    bad = (labels < 0) | (labels > 3)
    if bad.any():
        idx = np.unravel_index(np.argmax(bad), labels.shape)
        raise UnknownLabel(labels[idx].item(), idx)
    return labels


def remap_labels(labels, direction):
    """Convert between external (0,1,2,4) and internal (0,1,2,3) codes.

    ``direction`` is ``"external-to-internal"`` or ``"internal-to-external"``.
    """
    labels = np.asarray(labels)
    if direction == "external-to-internal":
        table = _EXTERNAL_TO_INTERNAL
    elif direction == "internal-to-external":
        table = _INTERNAL_TO_EXTERNAL
    else:
        raise ValueError(f"unknown direction {direction!r}")
    lut = np.full(256, 255, dtype=np.int16)
    for src, dst in table.items():
        lut[src] = dst
    in_range = (labels >= 0) & (labels < 256)
    out = np.full(labels.shape, 255, dtype=np.int16)
    out[in_range] = lut[labels[in_range].astype(np.int64)]
    bad = out == 255
    if bad.any():
        idx = np.unravel_index(np.argmax(bad), labels.shape)
        raise UnknownLabel(labels[idx].item(), idx)
    return out.astype(np.uint8)


def derive_tc(labels):
    """Tumour-core mask: ET or NCR/NET."""
    labels = np.asarray(labels)
    return (labels == ET) | (labels == NCR)


def _bbox_centre(mask):
    centres = []
    for axis in range(mask.ndim):
        other = tuple(a for a in range(mask.ndim) if a != axis)
        hits = np.flatnonzero(mask.any(axis=other))
        # rounds half up so a bbox exactly as wide as the window still fits
        centres.append((int(hits[0]) + int(hits[-1]) + 1) // 2)
    return centres


def crop_to_standard(vol, labels=None, grid=STANDARD_GRID):
    """Crop x/y around the brain and zero-pad z up to ``grid``.

    Returns ``(cropped_volume, cropped_labels_or_None, CropSpec)``.
    """
    X, Y, Z = vol.dims
    gx, gy, gz = grid
    if X < gx or Y < gy:
        raise GridTooSmall(f"in-plane dims {(X, Y)} smaller than {(gx, gy)}")
    if Z > gz:
        raise GridTooDeep(f"z extent {Z} exceeds {gz}")
    mask = vol.brain_mask()
    if not mask.any():
        raise NoBrainVoxels("volume has no nonzero voxels")
    if labels is not None and np.shape(labels) != (X, Y, Z):
        raise ShapeMismatch(f"labels {np.shape(labels)} vs volume {(X, Y, Z)}")

    cx, cy, _ = _bbox_centre(mask)
    x0 = int(np.clip(cx - gx // 2, 0, X - gx))
    y0 = int(np.clip(cy - gy // 2, 0, Y - gy))
    pad_lo = (gz - Z) // 2
    spec = CropSpec(x0, y0, pad_lo, gz - Z - pad_lo, (X, Y, Z), tuple(grid))

    data = np.zeros((vol.data.shape[0], gx, gy, gz), dtype=vol.data.dtype)
    data[:, :, :, pad_lo:pad_lo + Z] = vol.data[:, x0:x0 + gx, y0:y0 + gy, :]
    out_labels = None
    if labels is not None:
        labels = np.asarray(labels)
        out_labels = np.zeros((gx, gy, gz), dtype=labels.dtype)
        out_labels[:, :, pad_lo:pad_lo + Z] = labels[x0:x0 + gx, y0:y0 + gy, :]
    return MultiModalVolume(data, vol.voxel_size), out_labels, spec


def uncrop(arr, spec):
    """Undo ``crop_to_standard`` on the last three axes of ``arr``.

    Voxels outside the crop window become 0 and z padding is discarded.
    """
    arr = np.asarray(arr)
    if tuple(arr.shape[-3:]) != tuple(spec.grid):
        raise SpecMismatch(f"array grid {arr.shape[-3:]} does not match {spec.grid}")
    X, Y, Z = spec.original_dims
    gx, gy, _ = spec.grid
    out = np.zeros(arr.shape[:-3] + (X, Y, Z), dtype=arr.dtype)
    lo = spec.pad_z_lo
    out[..., spec.x0:spec.x0 + gx, spec.y0:spec.y0 + gy, :] = arr[..., lo:lo + Z]
    return out


def gaussian_normalize(vol, min_std=1e-6):
    """Zero-mean, unit-std intensities per modality over brain voxels.

    Statistics use the nonzero voxels of each modality and the population
    std. A modality whose brain std is below ``min_std`` maps to zeros.
    """
    out = np.zeros(vol.data.shape, dtype=np.float64)
    for m in range(vol.data.shape[0]):
        channel = vol.data[m]
        brain = channel != 0
        if not brain.any():
            raise NoBrainVoxels(f"modality {MODALITIES[m]} has no nonzero voxels")
        values = channel[brain].astype(np.float64)
        mean = values.mean()
        std = values.std()
        if std < min_std:
            continue
        out[m][brain] = (values - mean) / std
    return MultiModalVolume(out.astype(vol.data.dtype if vol.data.dtype.kind == "f" else np.float32),
                            vol.voxel_size)
