"""Randomized patch-correspondence search over a template library.

Each of the k independent runs seeds every ROI voxel with a random in-window
match, then alternates forward/reverse propagation sweeps with an
interleaved decaying random search. Runs share nothing but read-only inputs,
so they can execute on any thread budget with bit-identical results.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from . import kernels
from .rng import derive_seed, stream_state
from .volume import PatchGeometry, RoiMask, Volume

DIRECTIONS = ("forward", "reverse")


@dataclass(frozen=True)
class SearchParams:
    """Tunables of the correspondence search."""

    init_window: int = 13
    iterations: int = 3
    k: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.init_window < 1 or self.init_window % 2 == 0:
            raise ValueError(f"init_window must be odd and >= 1, got {self.init_window}")
        if self.iterations < 1:
            raise ValueError(f"iterations must be >= 1, got {self.iterations}")
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must fit in 64 bits")

    @property
    def half_window(self) -> int:
        return (self.init_window - 1) // 2


class Match(NamedTuple):
    template: int
    x: int
    y: int
    z: int
    distance: float


@dataclass(frozen=True)
class MatchField:
    """k matches per ROI voxel, stored as (k, n_roi) parallel arrays."""

    geometry: PatchGeometry
    dims: tuple[int, int, int]
    roi_index: np.ndarray
    template: np.ndarray
    pos_x: np.ndarray
    pos_y: np.ndarray
    pos_z: np.ndarray
    distance: np.ndarray

    @property
    def k(self) -> int:
        return self.template.shape[0]

    @property
    def n_voxels(self) -> int:
        return self.roi_index.shape[0]

    def rank_of(self, x: int, y: int, z: int) -> int:
        nx, ny, _ = self.dims
        flat = x + nx * (y + ny * z)
        pos = np.searchsorted(self.roi_index, flat)
        if pos >= self.roi_index.size or self.roi_index[pos] != flat:
            raise KeyError(f"voxel ({x}, {y}, {z}) is not in the ROI")
        return int(pos)

    def matches_at(self, x: int, y: int, z: int) -> list[Match]:
        i = self.rank_of(x, y, z)
        return [
            Match(
                int(self.template[j, i]),
                int(self.pos_x[j, i]),
                int(self.pos_y[j, i]),
                int(self.pos_z[j, i]),
                float(self.distance[j, i]),
            )
            for j in range(self.k)
        ]

    def run(self, j: int) -> "MatchField":
        """Single-run view (row ``j``) as a k=1 field."""
        return MatchField(
            geometry=self.geometry,
            dims=self.dims,
            roi_index=self.roi_index,
            template=self.template[j : j + 1],
            pos_x=self.pos_x[j : j + 1],
            pos_y=self.pos_y[j : j + 1],
            pos_z=self.pos_z[j : j + 1],
            distance=self.distance[j : j + 1],
        )

    def mean_distance(self) -> float:
        return float(self.distance.mean())

    def per_voxel_mean_distance(self) -> np.ndarray:
        return self.distance.mean(axis=0)

    def audit_max_error(self, subject: Volume, templates: Sequence[Volume]) -> float:
        """Largest |stored - recomputed| distance over all matches."""
        stack = _stack(templates, subject)
        fresh = np.empty_like(self.distance)
        kernels.recompute_distances(
            subject.values,
            stack,
            self.roi_index,
            self.geometry.radius,
            self.template,
            self.pos_z,
            self.pos_y,
            self.pos_x,
            fresh,
        )
        return float(np.abs(fresh - self.distance).max())

    def dump_text(self, path: str | Path) -> None:
        """Debug dump, one line per match: x y z k_idx t px py pz dist."""
        nx, ny, _ = self.dims
        x = self.roi_index % nx
        y = (self.roi_index // nx) % ny
        z = self.roi_index // (nx * ny)
        with open(path, "w") as fh:
            for i in range(self.n_voxels):
                for j in range(self.k):
                    fh.write(
                        f"{x[i]} {y[i]} {z[i]} {j} {self.template[j, i]} "
                        f"{self.pos_x[j, i]} {self.pos_y[j, i]} {self.pos_z[j, i]} "
                        f"{self.distance[j, i]:.17g}\n"
                    )


def _stack(templates: Sequence[Volume], subject: Volume) -> np.ndarray:
    if not templates:
        raise ValueError("template list must be non-empty")
    for t in templates:
        if t.dims != subject.dims:
            raise ValueError(f"template dims {t.dims} != subject dims {subject.dims}")
    return np.stack([t.values for t in templates])


def _check_setup(subject: Volume, roi: RoiMask, geometry: PatchGeometry) -> None:
    if roi.dims != subject.dims:
        raise ValueError(f"ROI dims {roi.dims} != subject dims {subject.dims}")
    roi.validate_for(geometry)
    if roi.count() == 0:
        raise ValueError("ROI is empty")


def _alloc(n_roi: int, k: int):
    return (
        np.zeros((k, n_roi), dtype=np.int32),
        np.zeros((k, n_roi), dtype=np.int32),
        np.zeros((k, n_roi), dtype=np.int32),
        np.zeros((k, n_roi), dtype=np.int32),
        np.zeros((k, n_roi), dtype=np.float64),
    )


def _field(geometry, subject, roi, t, px, py, pz, d) -> MatchField:
    return MatchField(
        geometry=geometry,
        dims=subject.dims,
        roi_index=roi.flat_indices,
        template=t,
        pos_x=px,
        pos_y=py,
        pos_z=pz,
        distance=d,
    )


def initialize_field(
    subject: Volume,
    templates: Sequence[Volume],
    roi: RoiMask,
    geometry: PatchGeometry,
    params: SearchParams,
    run: int = 0,
) -> MatchField:
    """Random in-window seeding of a single run, determined by (seed, run)."""
    _check_setup(subject, roi, geometry)
    stack = _stack(templates, subject)
    t, px, py, pz, d = _alloc(roi.count(), 1)
    state = stream_state(derive_seed(params.seed, "search", run))
    kernels.init_field(
        subject.values,
        stack,
        roi.flat_indices,
        geometry.radius,
        params.half_window,
        state,
        t[0],
        pz[0],
        py[0],
        px[0],
        d[0],
    )
    return _field(geometry, subject, roi, t, px, py, pz, d)


def propagation_pass(
    field: MatchField,
    direction: str,
    subject: Volume,
    templates: Sequence[Volume],
    roi: RoiMask,
    geometry: PatchGeometry,
) -> MatchField:
    """One propagation sweep (no random search); returns the updated field."""
    if direction not in DIRECTIONS:
        raise ValueError(f"direction must be one of {DIRECTIONS}, got {direction!r}")
    if field.geometry != geometry:
        raise ValueError(f"field was built for patch size {field.geometry.size}, got {geometry.size}")
    if field.k != 1:
        raise ValueError("propagation operates on single-run fields")
    if not np.array_equal(field.roi_index, roi.flat_indices):
        raise ValueError("field ROI does not match the given mask")
    _check_setup(subject, roi, geometry)
    stack = _stack(templates, subject)
    t = field.template.copy()
    px = field.pos_x.copy()
    py = field.pos_y.copy()
    pz = field.pos_z.copy()
    d = field.distance.copy()
    state = stream_state(0)  # unused without random search
    kernels.sweep_field(
        subject.values,
        stack,
        roi.flat_indices,
        roi.rank_map,
        geometry.radius,
        direction == "reverse",
        False,
        0,
        state,
        t[0],
        pz[0],
        py[0],
        px[0],
        d[0],
    )
    return _field(geometry, subject, roi, t, px, py, pz, d)


def random_search(
    match: Match,
    voxel: Sequence[int],
    subject: Volume,
    template: Volume,
    geometry: PatchGeometry,
    params: SearchParams,
    state: np.ndarray,
) -> Match:
    """Decaying random search around one entry; the template stays pinned."""
    x, y, z = (int(c) for c in voxel)
    bz, by, bx, bd = kernels.random_search_entry(
        subject.values,
        template.values,
        z,
        y,
        x,
        match.z,
        match.y,
        match.x,
        float(match.distance),
        geometry.radius,
        params.half_window,
        state,
    )
    return Match(match.template, int(bx), int(by), int(bz), float(bd))


def run_match(
    subject: Volume,
    templates: Sequence[Volume],
    roi: RoiMask,
    geometry: PatchGeometry,
    params: SearchParams,
    run: int = 0,
) -> MatchField:
    """One full independent search run: init plus alternating sweeps."""
    _check_setup(subject, roi, geometry)
    stack = _stack(templates, subject)
    t, px, py, pz, d = _alloc(roi.count(), 1)
    _run_into(subject.values, stack, roi, geometry, params, run, t[0], px[0], py[0], pz[0], d[0])
    return _field(geometry, subject, roi, t, px, py, pz, d)


def _run_into(sub_values, stack, roi, geometry, params, run, t, px, py, pz, d) -> None:
    state = stream_state(derive_seed(params.seed, "search", run))
    kernels.init_field(
        sub_values,
        stack,
        roi.flat_indices,
        geometry.radius,
        params.half_window,
        state,
        t,
        pz,
        py,
        px,
        d,
    )
    for it in range(params.iterations):
        kernels.sweep_field(
            sub_values,
            stack,
            roi.flat_indices,
            roi.rank_map,
            geometry.radius,
            it % 2 == 1,
            True,
            params.half_window,
            state,
            t,
            pz,
            py,
            px,
            d,
        )


def build_field(
    subject: Volume,
    templates: Sequence[Volume],
    roi: RoiMask,
    geometry: PatchGeometry,
    params: SearchParams,
    threads: int = 1,
) -> MatchField:
    """k independent runs stacked into one field.

    The runs share only read-only inputs; the result is identical for any
    thread budget.
    """
    _check_setup(subject, roi, geometry)
    stack = _stack(templates, subject)
    return _build_field_from_stack(subject.values, stack, subject.dims, roi, geometry, params, threads)


def _build_field_from_stack(sub_values, stack, dims, roi, geometry, params, threads=1) -> MatchField:
    t, px, py, pz, d = _alloc(roi.count(), params.k)

    def one(j: int) -> None:
        _run_into(sub_values, stack, roi, geometry, params, j, t[j], px[j], py[j], pz[j], d[j])

    if threads > 1 and params.k > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(one, range(params.k)))
    else:
        for j in range(params.k):
            one(j)
    return MatchField(
        geometry=geometry,
        dims=dims,
        roi_index=roi.flat_indices,
        template=t,
        pos_x=px,
        pos_y=py,
        pos_z=pz,
        distance=d,
    )


def brute_force_field(
    subject: Volume,
    templates: Sequence[Volume],
    roi: RoiMask,
    geometry: PatchGeometry,
    k: int,
    window: int,
) -> MatchField:
    """Exact k-nearest matches within the search window (test oracle).

    Cost is O(n_roi * n_templates * window^3 * patch^3); intended for small
    volumes only.
    """
    if window < 1 or window % 2 == 0:
        raise ValueError(f"window must be odd and >= 1, got {window}")
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    _check_setup(subject, roi, geometry)
    stack = _stack(templates, subject)
    half = (window - 1) // 2
    r = geometry.radius
    nx, ny, nz = subject.dims
    idx = roi.flat_indices
    x = idx % nx
    y = (idx // nx) % ny
    z = idx // (nx * ny)
    spans = (
        (np.minimum(x + half, nx - 1 - r) - np.maximum(x - half, r) + 1)
        * (np.minimum(y + half, ny - 1 - r) - np.maximum(y - half, r) + 1)
        * (np.minimum(z + half, nz - 1 - r) - np.maximum(z - half, r) + 1)
    )
    capacity = int(spans.min()) * len(templates)
    if k > capacity:
        raise ValueError(f"k={k} exceeds the {capacity} candidates of the tightest window")
    t, px, py, pz, d = _alloc(roi.count(), k)
    kernels.brute_force_field(
        subject.values,
        stack,
        roi.flat_indices,
        geometry.radius,
        (window - 1) // 2,
        k,
        t,
        pz,
        py,
        px,
        d,
    )
    return _field(geometry, subject, roi, t, px, py, pz, d)
