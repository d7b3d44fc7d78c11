"""Feature channels the correspondence search runs on."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .volume import TemplateLibrary, Volume, quantize_intensities

INTENSITY = "intensity"
GRADIENT_NORM = "gradnorm"
FEATURE_KINDS = (INTENSITY, GRADIENT_NORM)


def check_kinds(kinds: Sequence[str]) -> tuple[str, ...]:
    kinds = tuple(kinds)
    if not kinds:
        raise ValueError("feature list must be non-empty")
    if len(set(kinds)) != len(kinds):
        raise ValueError(f"duplicate feature kinds in {kinds}")
    for kind in kinds:
        if kind not in FEATURE_KINDS:
            raise ValueError(f"unknown feature kind {kind!r}, expected one of {FEATURE_KINDS}")
    return kinds


def gradient_norm(vol: Volume) -> Volume:
    """Pointwise norm of the intensity gradient.

    Central differences on interior voxels, one-sided differences on the
    faces. The output is snapped to the intensity grid so distance sums on
    this channel stay exact.
    """
    v = vol.values.astype(np.float64)
    gz, gy, gx = np.gradient(v)
    norm = np.sqrt(gx * gx + gy * gy + gz * gz)
    return Volume(quantize_intensities(norm), vol.spacing)


def derive_features(vol: Volume, kinds: Sequence[str]) -> list[Volume]:
    """One feature volume per kind; ``intensity`` is the input unchanged."""
    out = []
    for kind in check_kinds(kinds):
        out.append(vol if kind == INTENSITY else gradient_norm(vol))
    return out


def library_features(library: TemplateLibrary, kind: str) -> np.ndarray:
    """Stacked (n, nz, ny, nx) float32 feature volumes, cached per library.

    Templates are reused across subjects and scales, so each feature channel
    is derived once.
    """
    (kind,) = check_kinds([kind])
    cache = library._feature_cache
    if kind not in cache:
        vols = [derive_features(img, [kind])[0] for img in library.images]
        stack = np.stack([v.values for v in vols])
        stack.setflags(write=False)
        cache[kind] = stack
    return cache[kind]
