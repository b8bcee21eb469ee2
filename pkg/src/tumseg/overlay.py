"""Static slice figures with label overlays."""
from __future__ import annotations

import numpy as np

from .nifti import nifti_read
from .planes import Plane

# NCR/NET blue, ED red, ET yellow
COLOURS = {1: (0.0, 0.3, 1.0), 2: (1.0, 0.0, 0.0), 3: (1.0, 0.9, 0.0)}


def overlay_rgb(image, labels, alpha=0.6):
    """Blend a 2D intensity slice with internal labels into an RGB array."""
    image = np.asarray(image, dtype=np.float64)
    lo, hi = np.percentile(image, [1, 99]) if image.any() else (0.0, 1.0)
    grey = np.clip((image - lo) / (hi - lo or 1.0), 0, 1)
    rgb = np.repeat(grey[..., None], 3, axis=-1)
    for code, colour in COLOURS.items():
        m = labels == code
        rgb[m] = (1 - alpha) * rgb[m] + alpha * np.asarray(colour)
    return rgb


def save_overlay(image_path, labels_path, k, out_path, plane="axial"):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    from .volume import remap_labels

    image = nifti_read(image_path).data
    labels = remap_labels(np.rint(nifti_read(labels_path).data).astype(np.int64),
                          "external-to-internal")
    axis = Plane(plane).normal_axis
    img2d = np.take(image, k, axis=axis)
    lab2d = np.take(labels, k, axis=axis)
    fig, ax = plt.subplots(figsize=(4, 4), dpi=100)
    ax.imshow(np.transpose(overlay_rgb(img2d, lab2d), (1, 0, 2)), origin="lower")
    ax.set_axis_off()
    ax.set_title(f"{plane} slice {k}")
    fig.savefig(out_path, bbox_inches="tight")
    plt.close(fig)
