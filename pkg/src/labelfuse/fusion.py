"""Label fusion: match fields -> estimator maps -> binary segmentation.

Per ROI voxel, each of the k matches contributes its whole label patch,
weighted by a bilateral kernel that penalizes both patch dissimilarity and
the spatial offset of the match. The normalized patches are scattered over
the voxels they cover and averaged; independent (patch size, feature)
estimator maps are merged by a plain voxelwise mean before thresholding.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from . import features as feats
from . import kernels
from .backend import ACTIVE_BACKEND
from .patchmatch import MatchField, SearchParams, _build_field_from_stack
from .rng import SCHEME, derive_seed
from .roi import build_roi
from .volume import LabelMap, PatchGeometry, RoiMask, TemplateLibrary, Volume

_RANGE_SLACK = 1e-12


@dataclass(frozen=True)
class FusionParams:
    """Weight tunables: bandwidth scale, spatial scale, stability epsilon."""

    alpha: float = 2.0
    sigma: float = 2.0
    epsilon: float = 1e-6

    def __post_init__(self):
        for name in ("alpha", "sigma", "epsilon"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be strictly positive")


@dataclass(frozen=True)
class EstimatorConfig:
    """Grid of (patch size, feature) estimator pipelines."""

    scales: tuple[int, ...] = (3, 5)
    features: tuple[str, ...] = (feats.INTENSITY, feats.GRADIENT_NORM)

    def __post_init__(self):
        scales = tuple(int(s) for s in self.scales)
        if not scales:
            raise ValueError("at least one patch size is required")
        if any(s % 2 == 0 or s < 1 for s in scales):
            raise ValueError(f"patch sizes must be odd and >= 1, got {scales}")
        if list(scales) != sorted(set(scales)):
            raise ValueError(f"patch sizes must be strictly increasing, got {scales}")
        object.__setattr__(self, "scales", scales)
        object.__setattr__(self, "features", feats.check_kinds(self.features))

    @property
    def n_estimators(self) -> int:
        return len(self.scales) * len(self.features)

    @property
    def geometries(self) -> tuple[PatchGeometry, ...]:
        return tuple(PatchGeometry(s) for s in self.scales)

    def pairs(self) -> list[tuple[int, str]]:
        return [(s, f) for s in self.scales for f in self.features]


@dataclass(frozen=True)
class EstimatorMap:
    """Per-voxel label estimate in [0, 1] with its patch coverage count."""

    values: np.ndarray
    coverage: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        vals = np.array(self.values, dtype=np.float64, order="C")
        cov = np.array(self.coverage, dtype=np.int32, order="C")
        if vals.shape != cov.shape or vals.ndim != 3:
            raise ValueError("values and coverage must be matching 3-D arrays")
        if vals.min() < -_RANGE_SLACK or vals.max() > 1.0 + _RANGE_SLACK:
            raise ValueError("estimator values leave [0, 1]")
        vals.setflags(write=False)
        cov.setflags(write=False)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "coverage", cov)
        object.__setattr__(self, "spacing", tuple(float(s) for s in self.spacing))

    @property
    def dims(self) -> tuple[int, int, int]:
        nz, ny, nx = self.values.shape
        return (nx, ny, nz)


def bandwidth_sq(dists: Sequence[float], params: FusionParams) -> float:
    """Squared weight bandwidth: alpha^2 * (min distance + epsilon)."""
    if len(dists) == 0:
        raise ValueError("need at least one distance")
    return params.alpha**2 * (min(dists) + params.epsilon)


def bilateral_weight(ssd: float, bandwidth: float, spatial: float, params: FusionParams) -> float:
    """exp(1 - (ssd / bandwidth + spatial / sigma^2)); strictly positive."""
    if bandwidth <= 0:
        raise ValueError("bandwidth must be strictly positive")
    return math.exp(1.0 - (ssd / bandwidth + spatial / params.sigma**2))


def fuse_patches(
    match_field: MatchField,
    labels: Sequence[LabelMap],
    roi: RoiMask,
    geometry: PatchGeometry,
    params: FusionParams,
) -> EstimatorMap:
    """Weighted patchwise fusion of template labels along the match field.

    Every covered voxel ends up with the unweighted mean of the normalized
    label-patch values scattered onto it; uncovered voxels hold 0.
    """
    if match_field.geometry != geometry:
        raise ValueError(
            f"field was built for patch size {match_field.geometry.size}, "
            f"fusion requested {geometry.size}"
        )
    if not np.array_equal(match_field.roi_index, roi.flat_indices):
        raise ValueError("field ROI does not match the given mask")
    if not labels:
        raise ValueError("label list must be non-empty")
    for lab in labels:
        if lab.dims != match_field.dims:
            raise ValueError(f"label dims {lab.dims} != field dims {match_field.dims}")
    stack = np.stack([lab.values for lab in labels])
    return _fuse_from_stack(match_field, stack, labels[0].spacing, params)


def _fuse_from_stack(match_field, label_stack, spacing, params) -> EstimatorMap:
    nx, ny, nz = match_field.dims
    accum = np.zeros((nz, ny, nx), dtype=np.float64)
    count = np.zeros((nz, ny, nx), dtype=np.int32)
    scratch = np.zeros(match_field.geometry.size**3, dtype=np.float64)
    kernels.fuse_field(
        label_stack,
        match_field.roi_index,
        match_field.template,
        match_field.pos_z,
        match_field.pos_y,
        match_field.pos_x,
        match_field.distance,
        match_field.geometry.radius,
        float(params.alpha),
        float(params.sigma),
        float(params.epsilon),
        accum,
        count,
        scratch,
    )
    values = np.divide(accum, count, out=np.zeros_like(accum), where=count > 0)
    return EstimatorMap(values=values, coverage=count, spacing=spacing)


def merge_estimators(maps: Sequence[EstimatorMap]) -> EstimatorMap:
    """Voxelwise mean of the estimator maps; coverage is the elementwise min."""
    if not maps:
        raise ValueError("need at least one estimator map")
    dims = maps[0].dims
    for m in maps:
        if m.dims != dims:
            raise ValueError(f"estimator dims differ: {m.dims} != {dims}")
    total = maps[0].values.copy()
    for m in maps[1:]:
        total += m.values
    coverage = maps[0].coverage
    for m in maps[1:]:
        coverage = np.minimum(coverage, m.coverage)
    return EstimatorMap(values=total / len(maps), coverage=coverage, spacing=maps[0].spacing)


def binarize(estimator: EstimatorMap) -> LabelMap:
    """Final decision: 1 where the estimate is >= 0.5, else 0."""
    return LabelMap((estimator.values >= 0.5).astype(np.uint8), estimator.spacing)


@dataclass
class SegmentResult:
    labels: LabelMap
    estimator: EstimatorMap
    per_estimator: list[tuple[int, str, EstimatorMap]]
    fields: list[tuple[int, str, MatchField]]
    metadata: dict
    timings: dict


def segment(
    subject: Volume,
    library: TemplateLibrary,
    config: EstimatorConfig = EstimatorConfig(),
    search: SearchParams = SearchParams(),
    fusion: FusionParams = FusionParams(),
    roi: RoiMask | None = None,
    roi_dilate: float = 5.0,
    threads: int = 1,
    keep_fields: bool = False,
) -> SegmentResult:
    """Full pipeline: features, per-estimator search + fusion, merge, decide.

    Each (patch size, feature) estimator runs an independent k-run search
    seeded from (seed, estimator index), fuses its own map, and the maps are
    averaged and thresholded. Timings are recorded per stage.
    """
    if subject.dims != library.dims:
        raise ValueError(f"subject dims {subject.dims} != library dims {library.dims}")
    largest = config.geometries[-1]
    if roi is None:
        roi = build_roi(library, largest, dilate=roi_dilate)
    if roi.dims != subject.dims:
        raise ValueError(f"ROI dims {roi.dims} != subject dims {subject.dims}")
    roi.validate_for(largest)

    subject_features = {
        kind: vol for kind, vol in zip(config.features, feats.derive_features(subject, config.features))
    }
    pairs = config.pairs()
    fields: list[tuple[int, str, MatchField]] = []
    estimator_seeds = []
    t0 = time.perf_counter()
    for index, (scale, kind) in enumerate(pairs):
        run_seed = derive_seed(search.seed, "estimator", index)
        estimator_seeds.append(run_seed)
        params = replace(search, seed=run_seed)
        stack = feats.library_features(library, kind)
        match_field = _build_field_from_stack(
            subject_features[kind].values,
            stack,
            subject.dims,
            roi,
            PatchGeometry(scale),
            params,
            threads=threads,
        )
        fields.append((scale, kind, match_field))
    t1 = time.perf_counter()
    per_estimator = [
        (scale, kind, _fuse_from_stack(match_field, library.label_stack, subject.spacing, fusion))
        for scale, kind, match_field in fields
    ]
    t2 = time.perf_counter()
    merged = merge_estimators([m for _, _, m in per_estimator])
    labels = binarize(merged)
    t3 = time.perf_counter()

    timings = {
        "ann_seconds": t1 - t0,
        "fusion_seconds": t2 - t1,
        "aggregation_seconds": t3 - t2,
        "total_seconds": t3 - t0,
    }
    metadata = {
        "seed": search.seed,
        "k": search.k,
        "iterations": search.iterations,
        "init_window": search.init_window,
        "alpha": fusion.alpha,
        "sigma": fusion.sigma,
        "epsilon": fusion.epsilon,
        "scales": ",".join(str(s) for s in config.scales),
        "features": ",".join(config.features),
        "roi_dilate": roi_dilate,
        "n_templates": len(library),
        "roi_voxels": roi.count(),
        "estimator_seeds": ",".join(str(s) for s in estimator_seeds),
        "rng": SCHEME,
        "backend": ACTIVE_BACKEND,
        "scan_order": "x-fastest, forward/reverse alternating, neighbors tested x,y,z",
    }
    return SegmentResult(
        labels=labels,
        estimator=merged,
        per_estimator=per_estimator,
        fields=fields if keep_fields else [],
        metadata=metadata,
        timings=timings,
    )
