"""Rule-based clean-up of the ensemble's label map.

Regions are 26-connected components; a component's centre is its centroid
and distances are centroid to centroid in mm.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import ShapeMismatch
from .volume import BACKGROUND, ED, ET, NCR

MIN_ET_MM3 = 200.0
MIN_ED_MM3 = 200.0
MAX_ED_DISTANCE_MM = 75.0

_STRUCTURES = {
    6: ndimage.generate_binary_structure(3, 1),
    26: ndimage.generate_binary_structure(3, 3),
}


@dataclass
class Component:
    voxels: np.ndarray  # (n, 3) integer indices, lexicographically sorted
    volume_mm3: float
    centroid: np.ndarray  # mm

    @property
    def size(self):
        return len(self.voxels)


def connected_components(mask, connectivity=26, voxel_size=(1.0, 1.0, 1.0)):
    """Connected components sorted by size (desc) then smallest voxel index."""
    mask = np.asarray(mask, dtype=bool)
    if connectivity not in _STRUCTURES:
        raise ValueError("connectivity must be 6 or 26")
    lab, n = ndimage.label(mask, structure=_STRUCTURES[connectivity])
    if n == 0:
        return []
    spacing = np.asarray(voxel_size, dtype=np.float64)
    voxel_mm3 = float(np.prod(spacing))
    coords = np.argwhere(lab)  # C order -> lexicographic within each component
    ids = lab[tuple(coords.T)]
    order = np.argsort(ids, kind="stable")
    coords, ids = coords[order], ids[order]
    bounds = np.searchsorted(ids, np.arange(1, n + 2))
    comps = []
    for i in range(n):
        vox = coords[bounds[i]:bounds[i + 1]]
        comps.append(Component(vox, len(vox) * voxel_mm3, vox.mean(axis=0) * spacing))
    comps.sort(key=lambda c: (-c.size, tuple(c.voxels[0])))
    return comps


def relabel_small_et(labels, voxel_size=(1.0, 1.0, 1.0), min_mm3=MIN_ET_MM3):
    """ET components smaller than ``min_mm3`` become NCR/NET."""
    out = np.array(labels, copy=True)
    for comp in connected_components(out == ET, 26, voxel_size):
        if comp.volume_mm3 < min_mm3:
            out[tuple(comp.voxels.T)] = NCR
    return out


def tc_override(labels, tc):
    """Voxels inside the TC mask that are not ET become NCR/NET."""
    labels = np.asarray(labels)
    tc = np.asarray(tc, dtype=bool)
    if tc.shape != labels.shape:
        raise ShapeMismatch(f"tc {tc.shape} vs labels {labels.shape}")
    out = labels.copy()
    out[tc & (labels != ET)] = NCR
    return out


def clean_ed(labels, voxel_size=(1.0, 1.0, 1.0), min_mm3=MIN_ED_MM3,
             max_distance_mm=MAX_ED_DISTANCE_MM):
    """Drop small ED components lying far from the largest ED component."""
    out = np.array(labels, copy=True)
    comps = connected_components(out == ED, 26, voxel_size)
    if not comps:
        return out
    anchor = comps[0].centroid
    for comp in comps[1:]:
        dist = float(np.linalg.norm(comp.centroid - anchor))
        if comp.volume_mm3 < min_mm3 and dist > max_distance_mm:
            out[tuple(comp.voxels.T)] = BACKGROUND
    return out


def fill_tc_ed_interface(labels, max_iter=None):
    """Background voxels touching both tumour core and ED become ED.

    Repeats until nothing changes (or ``max_iter`` passes).
    """
    out = np.array(labels, copy=True)
    struct = _STRUCTURES[26]
    it = 0
    while max_iter is None or it < max_iter:
        near_tc = ndimage.binary_dilation((out == ET) | (out == NCR), structure=struct)
        near_ed = ndimage.binary_dilation(out == ED, structure=struct)
        fill = (out == BACKGROUND) & near_tc & near_ed
        if not fill.any():
            break
        out[fill] = ED
        it += 1
    return out


def postprocess(labels, tc=None, voxel_size=(1.0, 1.0, 1.0)):
    """Apply the four rules in order: small ET, TC override, ED clean-up,
    interface fill. A missing ``tc`` skips the override."""
    out = relabel_small_et(labels, voxel_size)
    if tc is not None:
        out = tc_override(out, tc)
    out = clean_ed(out, voxel_size)
    return fill_tc_ed_interface(out)
