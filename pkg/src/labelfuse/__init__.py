"""Patch-correspondence search and multi-scale label fusion for 3-D volumes."""

__version__ = "0.1.0"

from .backend import ACTIVE_BACKEND
from .evaluate import EvalReport, auc, dice, extend_library, leave_one_out, structure_volume
from .features import FEATURE_KINDS, GRADIENT_NORM, INTENSITY, derive_features, gradient_norm
from .fusion import (
    EstimatorConfig,
    EstimatorMap,
    FusionParams,
    SegmentResult,
    bandwidth_sq,
    bilateral_weight,
    binarize,
    fuse_patches,
    merge_estimators,
    segment,
)
from .patchmatch import (
    Match,
    MatchField,
    SearchParams,
    brute_force_field,
    build_field,
    initialize_field,
    propagation_pass,
    random_search,
    run_match,
)
from .phantom import PhantomSpec, generate_cohort, generate_subject
from .roi import build_roi
from .volume import (
    INTENSITY_GRID,
    LabelMap,
    PatchBoundsError,
    PatchGeometry,
    RoiMask,
    TemplateLibrary,
    Volume,
    Voxel,
    patch_ssd,
    quantize_intensities,
    shifted_patch_ssd,
    voxel_distance,
)
from .volio import VolumeFormatError, load_library, read_labels, read_volume, save_cohort, write_volume

__all__ = [
    "ACTIVE_BACKEND",
    "EvalReport",
    "auc",
    "dice",
    "extend_library",
    "leave_one_out",
    "structure_volume",
    "FEATURE_KINDS",
    "GRADIENT_NORM",
    "INTENSITY",
    "derive_features",
    "gradient_norm",
    "EstimatorConfig",
    "EstimatorMap",
    "FusionParams",
    "SegmentResult",
    "bandwidth_sq",
    "bilateral_weight",
    "binarize",
    "fuse_patches",
    "merge_estimators",
    "segment",
    "Match",
    "MatchField",
    "SearchParams",
    "brute_force_field",
    "build_field",
    "initialize_field",
    "propagation_pass",
    "random_search",
    "run_match",
    "PhantomSpec",
    "generate_cohort",
    "generate_subject",
    "build_roi",
    "INTENSITY_GRID",
    "LabelMap",
    "PatchBoundsError",
    "PatchGeometry",
    "RoiMask",
    "TemplateLibrary",
    "Volume",
    "Voxel",
    "patch_ssd",
    "quantize_intensities",
    "shifted_patch_ssd",
    "voxel_distance",
    "VolumeFormatError",
    "load_library",
    "read_labels",
    "read_volume",
    "save_cohort",
    "write_volume",
]
