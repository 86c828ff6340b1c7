"""Binary cells, signed distance fields and morphology.

A cell is an ``(H, W)`` uint8 array with 1 for material and 0 for void.
Signed distance fields are float64 arrays of the same shape, positive inside
material and negative in void, measured in pixels between pixel centers.
"""

import numpy as np
from scipy import ndimage

from ._validation import check_cell, check_field, check_scale


def saturation_distance(shape):
    """Distance assigned everywhere to a single-phase cell (the grid diagonal)."""
    h, w = shape
    return float(np.hypot(h, w))


def to_sdf(cell):
    """Exact signed Euclidean distance transform of a binary cell.

    Material pixels get the distance to the nearest void pixel center, void
    pixels minus the distance to the nearest material pixel center.
    """
    cell = check_cell(cell)
    n_mat = int(cell.sum())
    if n_mat == cell.size:
        return np.full(cell.shape, saturation_distance(cell.shape))
    if n_mat == 0:
        return np.full(cell.shape, -saturation_distance(cell.shape))
    inside = ndimage.distance_transform_edt(cell)
    outside = ndimage.distance_transform_edt(1 - cell)
    return inside - outside


def to_binary(sdf, threshold=0.0):
    """Threshold a field: material wherever ``sdf > threshold``."""
    sdf = np.asarray(sdf, dtype=np.float64)
    if sdf.ndim != 2:
        raise ValueError(f"sdf must be 2-D, got shape {sdf.shape}")
    return (sdf > threshold).astype(np.uint8)


def dilate(cell, scale):
    """Sliding-window maximum with a ``scale x scale`` square kernel."""
    cell = check_cell(cell)
    scale = check_scale(scale)
    if scale == 1:
        return cell.copy()
    # edge replication never adds values outside the clipped window,
    # so this matches an out-of-bounds-ignoring kernel
    return ndimage.maximum_filter(cell, size=scale, mode="nearest")


def erode(cell, scale):
    """Sliding-window minimum; the morphological dual of :func:`dilate`."""
    cell = check_cell(cell)
    scale = check_scale(scale)
    if scale == 1:
        return cell.copy()
    return ndimage.minimum_filter(cell, size=scale, mode="nearest")


def resample_bilinear(field, points):
    """Bilinear interpolation of ``field`` at ``(row, col)`` coordinates.

    ``points`` has shape ``(..., 2)``; coordinates are in pixel-center units
    and anything outside the grid is clamped to the border pixels.
    """
    field = check_field(field, "field")
    pts = np.asarray(points, dtype=np.float64)
    if pts.shape[-1] != 2:
        raise ValueError("points must have a trailing dimension of size 2")
    h, w = field.shape
    r = np.clip(pts[..., 0], 0.0, h - 1)
    c = np.clip(pts[..., 1], 0.0, w - 1)
    r0 = np.minimum(np.floor(r).astype(np.intp), h - 2) if h > 1 else np.zeros_like(r, np.intp)
    c0 = np.minimum(np.floor(c).astype(np.intp), w - 2) if w > 1 else np.zeros_like(c, np.intp)
    fr = r - r0
    fc = c - c0
    r1 = np.minimum(r0 + 1, h - 1)
    c1 = np.minimum(c0 + 1, w - 1)
    top = field[r0, c0] * (1.0 - fc) + field[r0, c1] * fc
    bottom = field[r1, c0] * (1.0 - fc) + field[r1, c1] * fc
    return top * (1.0 - fr) + bottom * fr


def volume_fraction(cell):
    cell = check_cell(cell)
    return float(cell.sum()) / cell.size


def pixel_grid(shape):
    """``(H, W, 2)`` array of ``(row, col)`` pixel-center coordinates."""
    h, w = shape
    rows, cols = np.meshgrid(np.arange(h, dtype=np.float64),
                             np.arange(w, dtype=np.float64), indexing="ij")
    return np.stack([rows, cols], axis=-1)


def iou(a, b):
    """Intersection over union of the material sets of two cells."""
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    union = np.logical_or(a, b).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(a, b).sum()) / float(union)
