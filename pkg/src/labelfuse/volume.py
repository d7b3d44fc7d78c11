"""Core dense-volume types and exact patch-distance primitives.

Arrays are C-contiguous and indexed ``values[z, y, x]``, so the flat memory
order is x-fastest; ``dims`` tuples and voxel coordinates are always
``(x, y, z)``. Volumes store float32 scalars, distance arithmetic runs in
float64.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import NamedTuple, Sequence

import numpy as np

from . import kernels

#: Reciprocal step of the intensity quantization grid. Data whose values are
#: multiples of 1/4096 keep every squared-difference sum exactly
#: representable in float64, which makes incremental distance updates
#: bit-identical to full recomputation.
INTENSITY_GRID = 4096

_AXES = {"x": 0, "y": 1, "z": 2}


class PatchBoundsError(ValueError):
    """A patch (or a shifted patch) would leave its volume."""


class Voxel(NamedTuple):
    x: int
    y: int
    z: int


def quantize_intensities(values: np.ndarray) -> np.ndarray:
    """Snap an array to the 1/4096 intensity grid, returning float32."""
    scaled = np.round(np.asarray(values, dtype=np.float64) * INTENSITY_GRID)
    return (scaled / INTENSITY_GRID).astype(np.float32)


@dataclass(frozen=True)
class PatchGeometry:
    """Cubic patch of odd side length ``size``."""

    size: int

    def __post_init__(self):
        if self.size < 1 or self.size % 2 == 0:
            raise ValueError(f"patch size must be odd and >= 1, got {self.size}")

    @property
    def radius(self) -> int:
        return (self.size - 1) // 2


@dataclass(frozen=True)
class Volume:
    """Dense 3-D scalar field with voxel spacing in mm."""

    values: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        arr = np.array(self.values, dtype=np.float32, order="C")
        if arr.ndim != 3:
            raise ValueError(f"expected a 3-D array, got shape {arr.shape}")
        if not np.isfinite(arr).all():
            raise ValueError("volume contains non-finite values")
        spacing = tuple(float(s) for s in self.spacing)
        if len(spacing) != 3 or any(s <= 0 for s in spacing):
            raise ValueError(f"spacing must be three positive reals, got {self.spacing}")
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)
        object.__setattr__(self, "spacing", spacing)

    @property
    def dims(self) -> tuple[int, int, int]:
        nz, ny, nx = self.values.shape
        return (nx, ny, nz)

    def at(self, x: int, y: int, z: int) -> float:
        return float(self.values[z, y, x])


@dataclass(frozen=True)
class LabelMap:
    """Dense binary map; values are exactly 0 or 1."""

    values: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        arr = np.array(self.values, dtype=np.uint8, order="C")
        if arr.ndim != 3:
            raise ValueError(f"expected a 3-D array, got shape {arr.shape}")
        if not ((arr == 0) | (arr == 1)).all():
            raise ValueError("label map contains values other than 0 and 1")
        spacing = tuple(float(s) for s in self.spacing)
        if len(spacing) != 3 or any(s <= 0 for s in spacing):
            raise ValueError(f"spacing must be three positive reals, got {self.spacing}")
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)
        object.__setattr__(self, "spacing", spacing)

    @property
    def dims(self) -> tuple[int, int, int]:
        nz, ny, nx = self.values.shape
        return (nx, ny, nz)

    def count(self) -> int:
        return int(self.values.sum())


@dataclass(frozen=True)
class RoiMask:
    """Mask of the subject voxels to process.

    Marked voxels must keep ``radius + 1`` voxels of clearance from every
    volume face (checked by :meth:`validate_for`), which guarantees fully
    in-bounds patches for the processed voxel and its scan neighbors.
    """

    values: np.ndarray

    def __post_init__(self):
        arr = np.array(self.values, dtype=np.uint8, order="C")
        if arr.ndim != 3:
            raise ValueError(f"expected a 3-D array, got shape {arr.shape}")
        if not ((arr == 0) | (arr == 1)).all():
            raise ValueError("ROI mask contains values other than 0 and 1")
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    @property
    def dims(self) -> tuple[int, int, int]:
        nz, ny, nx = self.values.shape
        return (nx, ny, nz)

    @cached_property
    def flat_indices(self) -> np.ndarray:
        """Marked voxels as ascending flat (x-fastest) indices."""
        idx = np.flatnonzero(self.values.reshape(-1)).astype(np.int64)
        idx.setflags(write=False)
        return idx

    @cached_property
    def rank_map(self) -> np.ndarray:
        """Flat index -> rank within :attr:`flat_indices`, -1 outside."""
        rank = np.full(self.values.size, -1, dtype=np.int32)
        rank[self.flat_indices] = np.arange(self.flat_indices.size, dtype=np.int32)
        rank.setflags(write=False)
        return rank

    def count(self) -> int:
        return int(self.flat_indices.size)

    def validate_for(self, geometry: PatchGeometry) -> None:
        nx, ny, nz = self.dims
        idx = self.flat_indices
        x = idx % nx
        y = (idx // nx) % ny
        z = idx // (nx * ny)
        margin = geometry.radius + 1
        bad = (
            (x < margin)
            | (x > nx - 1 - margin)
            | (y < margin)
            | (y > ny - 1 - margin)
            | (z < margin)
            | (z > nz - 1 - margin)
        )
        if bad.any():
            i = int(np.flatnonzero(bad)[0])
            raise ValueError(
                f"ROI voxel ({int(x[i])}, {int(y[i])}, {int(z[i])}) is closer than "
                f"{margin} voxels to a face for patch size {geometry.size}"
            )


@dataclass(frozen=True)
class TemplateLibrary:
    """Aligned (image, labels) pairs sharing one grid and spacing."""

    images: tuple[Volume, ...]
    labels: tuple[LabelMap, ...]
    ids: tuple[str, ...] = ()

    def __post_init__(self):
        images = tuple(self.images)
        labels = tuple(self.labels)
        if not images or len(images) != len(labels):
            raise ValueError("library needs n >= 1 matching (image, labels) pairs")
        dims = images[0].dims
        spacing = images[0].spacing
        for vol in images:
            if vol.dims != dims or vol.spacing != spacing:
                raise ValueError("all template images must share dims and spacing")
        for lab in labels:
            if lab.dims != dims:
                raise ValueError("all template label maps must share the library dims")
        ids = tuple(self.ids) if self.ids else tuple(f"template_{i}" for i in range(len(images)))
        if len(ids) != len(images):
            raise ValueError("ids must match the number of templates")
        object.__setattr__(self, "images", images)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "_feature_cache", {})

    def __len__(self) -> int:
        return len(self.images)

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.images[0].dims

    @property
    def spacing(self) -> tuple[float, float, float]:
        return self.images[0].spacing

    @cached_property
    def label_stack(self) -> np.ndarray:
        stack = np.stack([lab.values for lab in self.labels])
        stack.setflags(write=False)
        return stack

    def without(self, index: int) -> "TemplateLibrary":
        """Library with template ``index`` removed (for leave-one-out)."""
        keep = [i for i in range(len(self)) if i != index]
        return TemplateLibrary(
            images=tuple(self.images[i] for i in keep),
            labels=tuple(self.labels[i] for i in keep),
            ids=tuple(self.ids[i] for i in keep),
        )

    def extended(self, pairs: Sequence[tuple[Volume, LabelMap]], ids: Sequence[str]) -> "TemplateLibrary":
        return TemplateLibrary(
            images=self.images + tuple(img for img, _ in pairs),
            labels=self.labels + tuple(lab for _, lab in pairs),
            ids=self.ids + tuple(ids),
        )


def _check_patch(vol: Volume, center: Sequence[int], geometry: PatchGeometry, name: str) -> None:
    x, y, z = (int(c) for c in center)
    nx, ny, nz = vol.dims
    r = geometry.radius
    if x < r or x > nx - 1 - r or y < r or y > ny - 1 - r or z < r or z > nz - 1 - r:
        raise PatchBoundsError(
            f"{name} patch of size {geometry.size} centered at ({x}, {y}, {z}) "
            f"leaves the volume of dims {vol.dims}"
        )


def patch_ssd(
    a: Volume,
    ca: Sequence[int],
    b: Volume,
    cb: Sequence[int],
    geometry: PatchGeometry,
) -> float:
    """Exact squared-difference distance between two in-bounds patches."""
    _check_patch(a, ca, geometry, "first")
    _check_patch(b, cb, geometry, "second")
    ax, ay, az = (int(c) for c in ca)
    bx, by, bz = (int(c) for c in cb)
    return float(kernels.ssd_full(a.values, az, ay, ax, b.values, bz, by, bx, geometry.radius))


def shifted_patch_ssd(
    prev: float,
    a: Volume,
    ca: Sequence[int],
    b: Volume,
    cb: Sequence[int],
    axis: str,
    step: int,
    geometry: PatchGeometry,
) -> float:
    """Distance after shifting both patch centers one voxel along ``axis``.

    ``prev`` must equal ``patch_ssd(a, ca, b, cb, geometry)``. Raises
    :class:`PatchBoundsError` when either shifted patch leaves its volume, in
    which case the caller falls back to a full recomputation.
    """
    if axis not in _AXES:
        raise ValueError(f"axis must be one of 'x', 'y', 'z', got {axis!r}")
    if step not in (1, -1):
        raise ValueError(f"step must be +1 or -1, got {step}")
    axis_code = _AXES[axis]
    offset = [0, 0, 0]
    offset[axis_code] = step
    ca_new = tuple(int(c) + o for c, o in zip(ca, offset))
    cb_new = tuple(int(c) + o for c, o in zip(cb, offset))
    _check_patch(a, ca_new, geometry, "first shifted")
    _check_patch(b, cb_new, geometry, "second shifted")
    ax, ay, az = (int(c) for c in ca)
    bx, by, bz = (int(c) for c in cb)
    return float(
        kernels.ssd_shifted(
            float(prev), a.values, az, ay, ax, b.values, bz, by, bx, axis_code, step, geometry.radius
        )
    )


def voxel_distance(a: Sequence[int], b: Sequence[int]) -> float:
    """Euclidean distance between voxel coordinates, in voxel units."""
    dx = float(a[0]) - float(b[0])
    dy = float(a[1]) - float(b[1])
    dz = float(a[2]) - float(b[2])
    return math.sqrt(dx * dx + dy * dy + dz * dz)
