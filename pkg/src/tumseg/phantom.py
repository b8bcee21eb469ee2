"""Synthetic multi-modal tumour phantoms with known labels.

A phantom is an ellipsoidal "brain" of uniform tissue holding one rotated
ellipsoidal tumour: NCR/NET core, ET rim, ED shell. Each tissue has a mean
intensity per modality plus Gaussian noise; outside the brain every
modality is exactly 0.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import SpecInvalid
from .volume import BACKGROUND, ED, ET, NCR, MultiModalVolume

# mean intensity per modality (FLAIR, T1, T1-CE, T2)
DEFAULT_INTENSITIES = {
    "brain": (0.40, 0.60, 0.50, 0.40),
    "ncr": (0.55, 0.30, 0.25, 0.90),
    "et": (0.65, 0.45, 1.00, 0.60),
    "ed": (0.95, 0.40, 0.55, 0.80),
}


@dataclass(frozen=True)
class PhantomSpec:
    dims: tuple = (64, 64, 64)
    voxel_size: tuple = (1.0, 1.0, 1.0)
    centre: Optional[tuple] = None  # voxels; random near the grid centre if None
    axes: Optional[tuple] = None  # tumour-core semi-axes in voxels; random if None
    ncr_fraction: float = 0.55  # NCR/NET inside this fraction of the core radius
    et_fraction: float = 1.0  # ET rim out to this fraction
    ed_scale: float = 1.7  # ED shell out to this multiple of the core radius
    brain_fraction: float = 0.42  # brain semi-axes as a fraction of dims
    intensities: dict = field(default_factory=lambda: dict(DEFAULT_INTENSITIES))
    noise_std: float = 0.05
    seed: int = 0

    def validate(self):
        if len(self.dims) != 3 or min(self.dims) < 8:
            raise SpecInvalid(f"dims {self.dims} too small")
        if not 0 < self.ncr_fraction < self.et_fraction <= 1:
            raise SpecInvalid("need 0 < ncr_fraction < et_fraction <= 1")
        if self.ed_scale <= 1:
            raise SpecInvalid("ED shell must lie outside the core (ed_scale > 1)")
        if self.noise_std < 0 or not 0 < self.brain_fraction <= 0.5:
            raise SpecInvalid("bad noise_std / brain_fraction")
        for name in ("brain", "ncr", "et", "ed"):
            vals = np.asarray(self.intensities[name], dtype=float)
            if vals.shape != (4,) or not np.all(np.isfinite(vals)):
                raise SpecInvalid(f"intensities[{name!r}] must be 4 finite values")


def _random_rotation(rng):
    q = rng.standard_normal(4)
    q /= np.linalg.norm(q)
    a, b, c, d = q
    return np.array([
        [a * a + b * b - c * c - d * d, 2 * (b * c - a * d), 2 * (b * d + a * c)],
        [2 * (b * c + a * d), a * a - b * b + c * c - d * d, 2 * (c * d - a * b)],
        [2 * (b * d - a * c), 2 * (c * d + a * b), a * a - b * b - c * c + d * d],
    ])


def generate_phantom(spec=PhantomSpec()):
    """Return ``(MultiModalVolume, labels)`` with internal label codes."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    dims = np.asarray(spec.dims)
    grid = np.stack(np.meshgrid(*[np.arange(d, dtype=np.float64) for d in dims],
                                indexing="ij"), axis=-1)
    mid = (dims - 1) / 2.0

    brain_r = spec.brain_fraction * dims
    brain = np.sum(((grid - mid) / brain_r) ** 2, axis=-1) <= 1.0

    small = dims.min()
    axes = np.asarray(spec.axes if spec.axes is not None
                      else rng.uniform(0.08, 0.14, size=3) * small, dtype=np.float64)
    if spec.centre is not None:
        centre = np.asarray(spec.centre, dtype=np.float64)
    else:
        centre = mid + rng.uniform(-0.12, 0.12, size=3) * dims
    rot = _random_rotation(rng)
    local = (grid - centre) @ rot  # coordinates in the tumour frame
    r = np.sqrt(np.sum((local / axes) ** 2, axis=-1))  # normalised core radius

    labels = np.zeros(tuple(dims), dtype=np.uint8)
    labels[r < spec.ed_scale] = ED
    labels[r < spec.et_fraction] = ET
    labels[r < spec.ncr_fraction] = NCR
    labels[~brain] = BACKGROUND

    tissue_of = {BACKGROUND: "brain", NCR: "ncr", ED: "ed", ET: "et"}
    data = np.zeros((4,) + tuple(dims), dtype=np.float32)
    noise = rng.normal(0.0, spec.noise_std, size=data.shape)
    for code, name in tissue_of.items():
        region = brain & (labels == code)
        means = np.asarray(spec.intensities[name], dtype=np.float64)
        for m in range(4):
            data[m][region] = means[m] + noise[m][region]
    # keep brain voxels strictly nonzero so the brain mask survives noise
    data[:, brain] = np.maximum(data[:, brain], 0.01)
    return MultiModalVolume(data, spec.voxel_size), labels
