"""On-disk layout, preprocessing of subjects, probability files and config
parsing.

A data directory holds one folder per subject in the BraTS style::

    DIR/<id>/<id>_flair.nii.gz   (also _t1, _t1ce, _t2)
    DIR/<id>/<id>_seg.nii.gz     labels, external codes 0/1/2/4 (optional)
    DIR/<id>/<id>_crop.txt       CropSpec sidecar, preprocessed data only
"""
from __future__ import annotations

import os
import struct
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import BadMagic, ConfigError, ShapeMismatch, TruncatedFile
from .nifti import nifti_read, nifti_write
from .train import AugmentConfig, TrainConfig, plane_unet_config
from .unet import UNetConfig
from .volume import (
    MODALITIES,
    STANDARD_GRID,
    CropSpec,
    MultiModalVolume,
    crop_to_standard,
    gaussian_normalize,
    remap_labels,
)


@dataclass
class SubjectRecord:
    subject_id: str
    modality_paths: dict
    label_path: Optional[Path] = None
    crop_path: Optional[Path] = None


def subject_record(data_dir, subject_id):
    base = Path(data_dir) / subject_id
    paths = {m: base / f"{subject_id}_{m}.nii.gz" for m in MODALITIES}
    seg = base / f"{subject_id}_seg.nii.gz"
    crop = base / f"{subject_id}_crop.txt"
    return SubjectRecord(subject_id, paths, seg if seg.exists() else None,
                         crop if crop.exists() else None)


def list_subjects(data_dir):
    data_dir = Path(data_dir)
    return sorted(p.name for p in data_dir.iterdir()
                  if p.is_dir() and (p / f"{p.name}_flair.nii.gz").exists())


def write_subject(data_dir, subject_id, vol, labels=None, crop=None):
    base = Path(data_dir) / subject_id
    base.mkdir(parents=True, exist_ok=True)
    for m, name in enumerate(MODALITIES):
        nifti_write(base / f"{subject_id}_{name}.nii.gz", vol.data[m].astype(np.float32),
                    vol.voxel_size, np.float32)
    if labels is not None:
        write_labels(base / f"{subject_id}_seg.nii.gz", labels, vol.voxel_size)
    if crop is not None:
        (base / f"{subject_id}_crop.txt").write_text(crop.to_text())


def write_labels(path, labels, voxel_size=(1.0, 1.0, 1.0)):
    """Internal labels -> uint8 NIfTI in external codes."""
    nifti_write(path, remap_labels(labels, "internal-to-external"), voxel_size, np.uint8)


def read_labels(path):
    img = nifti_read(path)
    return remap_labels(np.rint(img.data).astype(np.int64), "external-to-internal"), img.voxel_size


def read_subject(data_dir, subject_id):
    """Returns ``(MultiModalVolume, labels_or_None, CropSpec_or_None)``."""
    rec = subject_record(data_dir, subject_id)
    imgs = [nifti_read(rec.modality_paths[m]) for m in MODALITIES]
    shapes = {img.data.shape for img in imgs}
    if len(shapes) != 1:
        raise ShapeMismatch(f"{subject_id}: modality shapes differ {shapes}")
    vol = MultiModalVolume(np.stack([img.data.astype(np.float32) for img in imgs]),
                           imgs[0].voxel_size)
    labels = read_labels(rec.label_path)[0] if rec.label_path else None
    crop = CropSpec.from_text(rec.crop_path.read_text()) if rec.crop_path else None
    return vol, labels, crop


def preprocess(vol, labels=None, grid=STANDARD_GRID):
    """Crop/pad to ``grid`` and normalise intensities."""
    cropped, cropped_labels, spec = crop_to_standard(vol, labels, grid)
    return gaussian_normalize(cropped), cropped_labels, spec


# --- probability volumes -------------------------------------------------------------

PROB_MAGIC = b"TSGPROB\0"


def save_probs(path, probs):
    """Little-endian: magic, u32 version=1, u32 C, X, Y, Z, float32 data (C order)."""
    probs = np.asarray(probs)
    with open(path, "wb") as fh:
        fh.write(PROB_MAGIC + struct.pack("<5I", 1, *probs.shape))
        fh.write(np.ascontiguousarray(probs, dtype="<f4").tobytes())


def load_probs(path):
    raw = Path(path).read_bytes()
    if raw[:8] != PROB_MAGIC:
        raise BadMagic(f"{path} is not a probability volume")
    version, *shape = struct.unpack_from("<5I", raw, 8)
    count = int(np.prod(shape))
    if len(raw) < 28 + 4 * count:
        raise TruncatedFile(f"{path} truncated")
    return np.frombuffer(raw, dtype="<f4", count=count, offset=28).reshape(shape).astype(np.float32)


# --- config files --------------------------------------------------------------------

_SECTIONS = {"unet": UNetConfig, "train": TrainConfig, "augment": AugmentConfig}


@dataclass(frozen=True)
class RunConfig:
    unet: UNetConfig = UNetConfig()
    train: TrainConfig = TrainConfig()
    augment: AugmentConfig = AugmentConfig()
    explicit: frozenset = frozenset()  # "section.field" keys set by the file

    def network_config(self, role):
        """UNetConfig for ``role`` (a plane name or ``"tc"``).

        The role fixes the class count and, unless the file sets
        ``unet.initial_kernel``, the first kernel size.
        """
        cfg = plane_unet_config(role, self.unet)
        if "unet.initial_kernel" in self.explicit:
            cfg = replace(cfg, initial_kernel=self.unet.initial_kernel)
        if "unet.num_classes" in self.explicit and self.unet.num_classes != cfg.num_classes:
            raise ConfigError(f"{role} network needs num_classes={cfg.num_classes}")
        return cfg


def _coerce(text, default):
    if isinstance(default, tuple):
        parts = [p.strip() for p in text.split(",")]
        if len(parts) != len(default):
            raise ConfigError(f"expected {len(default)} comma-separated values, got {text!r}")
        return tuple(_coerce(p, d) for p, d in zip(parts, default))
    if isinstance(default, bool):
        return text.lower() in ("1", "true", "yes")
    if isinstance(default, int):
        return int(text)
    if isinstance(default, float):
        return float(text)
    return text


def parse_config(text, base=RunConfig()):
    """Parse flat ``section.field = value`` lines (``#`` comments allowed).

    Sections are ``unet``, ``train`` and ``augment``; every dataclass field is
    addressable and unknown keys raise ConfigError.
    """
    updates = {name: {} for name in _SECTIONS}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"line {lineno}: expected key = value")
        section, _, name = key.strip().partition(".")
        if section not in _SECTIONS:
            raise ConfigError(f"line {lineno}: unknown key {key.strip()!r}")
        current = getattr(base, section)
        known = {f.name for f in fields(current)}
        if name not in known:
            raise ConfigError(f"line {lineno}: unknown key {key.strip()!r}")
        try:
            updates[section][name] = _coerce(value.strip(), getattr(current, name))
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: {exc}") from exc
    explicit = frozenset(f"{s}.{k}" for s, u in updates.items() for k in u)
    try:
        sections = {s: replace(getattr(base, s), **u) for s, u in updates.items()}
        return RunConfig(**sections, explicit=base.explicit | explicit)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path=None):
    if path is None:
        return RunConfig()
    return parse_config(Path(path).read_text())


def config_threads():
    value = os.environ.get("TUMSEG_THREADS")
    return int(value) if value else None
