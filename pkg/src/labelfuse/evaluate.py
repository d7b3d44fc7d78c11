"""Segmentation metrics, leave-one-out harness, and library extension."""

from __future__ import annotations

import statistics
import time
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .fusion import EstimatorConfig, FusionParams, segment
from .patchmatch import SearchParams
from .rng import derive_seed
from .volume import LabelMap, TemplateLibrary, Volume


def dice(m1: LabelMap, m2: LabelMap) -> float:
    """Overlap coefficient 2|A and B| / (|A| + |B|); 1.0 for two empty maps."""
    if m1.dims != m2.dims:
        raise ValueError(f"label dims differ: {m1.dims} != {m2.dims}")
    a = m1.values
    b = m2.values
    inter = int(np.count_nonzero((a == 1) & (b == 1)))
    total = int(a.sum()) + int(b.sum())
    if total == 0:
        return 1.0
    return 2.0 * inter / total


def structure_volume(m: LabelMap, spacing: Sequence[float] | None = None) -> float:
    """Labeled volume in mm^3: voxel count times the voxel volume."""
    sx, sy, sz = spacing if spacing is not None else m.spacing
    return float(m.count()) * float(sx) * float(sy) * float(sz)


def auc(group_a: Sequence[float], group_b: Sequence[float]) -> float:
    """Rank-based separation: fraction of (a, b) pairs with a > b, ties 0.5.

    Values near 1 mean group A runs larger.
    """
    if len(group_a) == 0 or len(group_b) == 0:
        raise ValueError("both groups must be non-empty")
    a = np.asarray(group_a, dtype=np.float64)[:, None]
    b = np.asarray(group_b, dtype=np.float64)[None, :]
    wins = int(np.count_nonzero(a > b))
    ties = int(np.count_nonzero(a == b))
    return (2 * wins + ties) / (2 * len(group_a) * len(group_b))


@dataclass
class EvalReport:
    subject_ids: list[str]
    dice_scores: list[float]
    volumes_mm3: list[float]
    seconds: list[float]
    stage_seconds: dict

    @property
    def median_dice(self) -> float:
        return statistics.median(self.dice_scores)

    @property
    def mean_dice(self) -> float:
        return statistics.fmean(self.dice_scores)

    @property
    def std_dice(self) -> float:
        return statistics.pstdev(self.dice_scores) if len(self.dice_scores) > 1 else 0.0

    def to_text(self) -> str:
        lines = [
            f"n_subjects={len(self.subject_ids)}",
            f"median_dice={self.median_dice:.6f}",
            f"mean_dice={self.mean_dice:.6f}",
            f"std_dice={self.std_dice:.6f}",
        ]
        for stage, secs in self.stage_seconds.items():
            lines.append(f"time_{stage}={secs:.3f}")
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        rows = ["id,dice,volume_mm3,seconds"]
        for sid, d, v, s in zip(self.subject_ids, self.dice_scores, self.volumes_mm3, self.seconds):
            rows.append(f"{sid},{d:.6f},{v:.6f},{s:.3f}")
        return "\n".join(rows) + "\n"


def leave_one_out(
    cohort: TemplateLibrary,
    config: EstimatorConfig = EstimatorConfig(),
    search: SearchParams = SearchParams(),
    fusion: FusionParams = FusionParams(),
    roi_dilate: float = 5.0,
    threads: int = 1,
) -> EvalReport:
    """Segment every subject against the rest of the cohort.

    The per-subject seed is derived from (base seed, subject id), so the
    report is reproducible and insensitive to evaluation order.
    """
    if len(cohort) < 2:
        raise ValueError("leave-one-out needs a cohort of at least 2 subjects")
    ids = list(cohort.ids)
    dice_scores = []
    volumes = []
    seconds = []
    stage_totals: dict[str, float] = {}
    for i, subject_id in enumerate(ids):
        library = cohort.without(i)
        params = SearchParams(
            init_window=search.init_window,
            iterations=search.iterations,
            k=search.k,
            seed=derive_seed(search.seed, "subject", subject_id),
        )
        t0 = time.perf_counter()
        result = segment(
            cohort.images[i],
            library,
            config=config,
            search=params,
            fusion=fusion,
            roi_dilate=roi_dilate,
            threads=threads,
        )
        elapsed = time.perf_counter() - t0
        dice_scores.append(dice(result.labels, cohort.labels[i]))
        volumes.append(structure_volume(result.labels, cohort.spacing))
        seconds.append(elapsed)
        for stage, secs in result.timings.items():
            stage_totals[stage] = stage_totals.get(stage, 0.0) + secs
    return EvalReport(
        subject_ids=ids,
        dice_scores=dice_scores,
        volumes_mm3=volumes,
        seconds=seconds,
        stage_seconds=stage_totals,
    )


def extend_library(
    library: TemplateLibrary,
    unlabeled: Sequence[Volume],
    config: EstimatorConfig = EstimatorConfig(),
    search: SearchParams = SearchParams(),
    fusion: FusionParams = FusionParams(),
    roi_dilate: float = 5.0,
    threads: int = 1,
    ids: Sequence[str] | None = None,
) -> TemplateLibrary:
    """Segment each unlabeled volume with ``library`` and append the result.

    Single pass: every new volume is labeled against the original library,
    then all (image, automatic labels) pairs are appended at once.
    """
    if not unlabeled:
        return library
    if ids is None:
        ids = [f"auto_{i}" for i in range(len(unlabeled))]
    if len(ids) != len(unlabeled):
        raise ValueError("ids must match the number of unlabeled volumes")
    pairs = []
    for vol in unlabeled:
        result = segment(
            vol,
            library,
            config=config,
            search=search,
            fusion=fusion,
            roi_dilate=roi_dilate,
            threads=threads,
        )
        pairs.append((vol, result.labels))
    return library.extended(pairs, ids)
