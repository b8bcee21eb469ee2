"""Triplanar slicing of 3D grids and reassembly of per-slice outputs.

Axis conventions on a (channel, x, y, z) grid:

    axial     normal z, slice = grid[:, :, :, k]  -> (C, X, Y)
    sagittal  normal x, slice = grid[:, k, :, :]  -> (C, Y, Z)
    coronal   normal y, slice = grid[:, :, k, :]  -> (C, X, Z)
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import IncompleteStack, NonStandardGrid, ShapeMismatch
from .volume import STANDARD_GRID


class Plane(enum.Enum):
    AXIAL = "axial"
    SAGITTAL = "sagittal"
    CORONAL = "coronal"

    @property
    def normal_axis(self):
        """Spatial axis (0=x, 1=y, 2=z) the plane is perpendicular to."""
        return {Plane.AXIAL: 2, Plane.SAGITTAL: 0, Plane.CORONAL: 1}[self]

    def slice_dims(self, grid=STANDARD_GRID):
        return tuple(g for a, g in enumerate(grid) if a != self.normal_axis)


PLANES = (Plane.AXIAL, Plane.SAGITTAL, Plane.CORONAL)


@dataclass
class SliceStack:
    plane: Plane
    slices: np.ndarray  # (n_slices, C, H, W)
    index: np.ndarray  # position of each slice along the plane normal

    def __len__(self):
        return len(self.slices)


def _to_stack_order(grid, plane):
    # (C, X, Y, Z) -> (n, C, H, W)
    return np.moveaxis(grid, plane.normal_axis + 1, 0)


def extract_slices(vol, plane, grid=STANDARD_GRID):
    """Cut a (C, X, Y, Z) array (or MultiModalVolume) into 2D slices."""
    data = getattr(vol, "data", vol)
    data = np.asarray(data)
    if data.ndim != 4 or tuple(data.shape[1:]) != tuple(grid):
        raise NonStandardGrid(f"expected (C, {grid}) grid, got {data.shape}")
    slices = np.ascontiguousarray(_to_stack_order(data, plane))
    return SliceStack(plane, slices, np.arange(len(slices)))


def assemble_probs(stack, plane=None, grid=STANDARD_GRID):
    """Place per-slice (C, H, W) arrays back on the (C, X, Y, Z) grid."""
    plane = plane or stack.plane
    n = grid[plane.normal_axis]
    index = np.asarray(stack.index)
    missing = sorted(set(range(n)) - set(index.tolist()))
    if missing:
        raise IncompleteStack(f"{plane.value} stack missing slices {missing[:10]}")
    slices = np.asarray(stack.slices)
    if tuple(slices.shape[2:]) != plane.slice_dims(grid) or len(slices) != len(index):
        raise ShapeMismatch(f"slice dims {slices.shape} do not fit {plane.value} on {grid}")
    ordered = np.empty((n,) + slices.shape[1:], dtype=slices.dtype)
    ordered[index] = slices
    return np.ascontiguousarray(np.moveaxis(ordered, 0, plane.normal_axis + 1))


def average_probs(vols):
    """Voxelwise mean of probability volumes with identical shapes."""
    vols = [np.asarray(v) for v in vols]
    if not vols:
        raise ShapeMismatch("need at least one probability volume")
    shape = vols[0].shape
    for v in vols[1:]:
        if v.shape != shape:
            raise ShapeMismatch(f"{v.shape} vs {shape}")
    total = np.zeros(shape, dtype=np.float64)
    for v in vols:
        total += v
    return (total / len(vols)).astype(np.result_type(*vols))
