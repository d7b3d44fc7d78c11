"""Region-of-interest construction from template labels."""

from __future__ import annotations

import numpy as np
from scipy import ndimage

from .volume import PatchGeometry, RoiMask, TemplateLibrary


def build_roi(library: TemplateLibrary, geometry: PatchGeometry, dilate: float = 5.0) -> RoiMask:
    """Union of the template label masks, dilated, shrunk to legal margins.

    ``dilate`` is the euclidean dilation radius in voxels; ``geometry`` is
    the largest patch the search will use, which fixes the face margin the
    mask must keep.
    """
    union = np.zeros(library.labels[0].values.shape, dtype=bool)
    for lab in library.labels:
        union |= lab.values.astype(bool)
    if not union.any():
        raise ValueError("cannot build a ROI from all-empty template labels")
    if dilate > 0:
        mask = ndimage.distance_transform_edt(~union) <= dilate
    else:
        mask = union
    margin = geometry.radius + 1
    mask[:margin, :, :] = False
    mask[-margin:, :, :] = False
    mask[:, :margin, :] = False
    mask[:, -margin:, :] = False
    mask[:, :, :margin] = False
    mask[:, :, -margin:] = False
    if not mask.any():
        raise ValueError("ROI is empty after enforcing patch margins")
    roi = RoiMask(mask.astype(np.uint8))
    roi.validate_for(geometry)
    return roi
