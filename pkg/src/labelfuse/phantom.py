"""Synthetic cohort generator for desk-scale verification.

Each subject is a smoothly deformed ellipsoid: the ground-truth label is the
ellipsoid warped by a low-order trigonometric displacement field with
per-subject random phases, and the image is the contrast-scaled label,
blurred, plus Gaussian noise, snapped to the intensity grid. Generation is
a pure function of (seed, subject index).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .volume import LabelMap, TemplateLibrary, Volume, quantize_intensities

_BLUR = np.array([0.25, 0.5, 0.25])


@dataclass(frozen=True)
class PhantomSpec:
    dims: tuple[int, int, int] = (48, 48, 48)
    n_subjects: int = 20
    semi_axes: tuple[float, float, float] = (16.0, 13.0, 10.0)
    deform_amplitude: float = 2.0
    foreground: float = 1.0
    background: float = 0.0
    noise_std: float = 0.05
    seed: int = 0
    patch_margin: int = 2  # largest patch radius the cohort must support

    def __post_init__(self):
        if self.n_subjects < 1:
            raise ValueError("n_subjects must be >= 1")
        if len(self.dims) != 3 or any(d < 8 for d in self.dims):
            raise ValueError(f"dims must be three values >= 8, got {self.dims}")
        if self.deform_amplitude < 0 or self.noise_std < 0:
            raise ValueError("amplitude and noise std must be >= 0")
        if any(a <= 0 for a in self.semi_axes):
            raise ValueError("semi-axes must be positive")
        needed = self.patch_margin + self.deform_amplitude + 2
        margin = min((d - 1) / 2 - a for d, a in zip(self.dims, self.semi_axes))
        if margin < needed:
            raise ValueError(
                f"ellipsoid margin {margin:.1f} voxels < required {needed:.1f} "
                f"(patch margin + deformation amplitude + 2)"
            )


def _grids(dims):
    nx, ny, nz = dims
    z, y, x = np.meshgrid(
        np.arange(nz, dtype=np.float64),
        np.arange(ny, dtype=np.float64),
        np.arange(nx, dtype=np.float64),
        indexing="ij",
    )
    return x, y, z


def _subject_label(spec: PhantomSpec, rng: np.random.Generator) -> np.ndarray:
    nx, ny, nz = spec.dims
    x, y, z = _grids(spec.dims)
    cx, cy, cz = (nx - 1) / 2, (ny - 1) / 2, (nz - 1) / 2
    ax, ay, az = spec.semi_axes
    phases = rng.uniform(0.0, 2.0 * np.pi, size=(3, 3))
    amp = spec.deform_amplitude / 3.0
    displaced = []
    for comp in range(3):
        u = (
            np.sin(2.0 * np.pi * x / nx + phases[comp, 0])
            + np.sin(2.0 * np.pi * y / ny + phases[comp, 1])
            + np.sin(2.0 * np.pi * z / nz + phases[comp, 2])
        )
        displaced.append(amp * u)
    xs = x + displaced[0]
    ys = y + displaced[1]
    zs = z + displaced[2]
    implicit = ((xs - cx) / ax) ** 2 + ((ys - cy) / ay) ** 2 + ((zs - cz) / az) ** 2
    return (implicit <= 1.0).astype(np.uint8)


def _subject_image(spec: PhantomSpec, label: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    img = spec.background + (spec.foreground - spec.background) * label.astype(np.float64)
    for axis in range(3):
        img = ndimage.convolve1d(img, _BLUR, axis=axis, mode="nearest")
    if spec.noise_std > 0:
        img = img + rng.normal(0.0, spec.noise_std, size=img.shape)
    return quantize_intensities(img)


def generate_subject(spec: PhantomSpec, index: int) -> tuple[Volume, LabelMap]:
    """Deterministic (image, labels) pair for one subject index."""
    if not 0 <= index < spec.n_subjects:
        raise ValueError(f"subject index {index} outside [0, {spec.n_subjects})")
    seq = np.random.SeedSequence(entropy=spec.seed, spawn_key=(index,))
    rng = np.random.default_rng(seq)
    label = _subject_label(spec, rng)
    image = _subject_image(spec, label, rng)
    return Volume(image), LabelMap(label)


def generate_cohort(spec: PhantomSpec) -> TemplateLibrary:
    """The full cohort as a template library with ``subj_<i>`` ids."""
    images = []
    labels = []
    ids = []
    for i in range(spec.n_subjects):
        img, lab = generate_subject(spec, i)
        images.append(img)
        labels.append(lab)
        ids.append(f"subj_{i}")
    return TemplateLibrary(images=tuple(images), labels=tuple(labels), ids=tuple(ids))
