"""Command-line front end: segment, loo, phantom, bench, version.

Exit codes: 0 success, 2 configuration error, 3 I/O error, 4 pipeline error.
"""

from __future__ import annotations

import argparse
import csv
import io
import os
import statistics
import subprocess
import sys
import tempfile
import time
from pathlib import Path

import numpy as np

from . import __version__, kernels
from .backend import ACTIVE_BACKEND, ENV_VAR
from .config import ConfigError, RunConfig, load_config
from .evaluate import leave_one_out
from .fusion import segment
from .phantom import PhantomSpec, generate_cohort
from .rng import SCHEME
from .volio import VolumeFormatError, load_library, read_labels, read_volume, save_cohort, write_volume
from .volume import RoiMask, Volume


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="labelfuse")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_run_flags(p, need_subject: bool):
        p.add_argument("--config", help="config file; flags override its values")
        p.add_argument("--library", help="cohort manifest path")
        if need_subject:
            p.add_argument("--subject", help="subject volume path")
        p.add_argument("--roi", help="optional ROI mask volume (label dtype)")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--scales", help="comma-separated odd patch sizes, e.g. 3,5")
        p.add_argument("--features", help="comma-separated features: intensity,gradnorm")
        p.add_argument("--k", type=int)
        p.add_argument("--iterations", type=int)
        p.add_argument("--init-window", dest="init_window", type=int)
        p.add_argument("--seed", type=int)
        p.add_argument("--alpha", type=float)
        p.add_argument("--sigma", type=float)
        p.add_argument("--epsilon", type=float)
        p.add_argument("--roi-dilate", dest="roi_dilate", type=float)
        p.add_argument("--threads", type=int, default=1)

    p_seg = sub.add_parser("segment", help="segment one subject against a library")
    add_run_flags(p_seg, need_subject=True)
    p_seg.add_argument("--dump-ann", action="store_true", help="write per-estimator match dumps")
    p_seg.add_argument("--dump-estimators", action="store_true", help="write per-estimator maps")

    p_loo = sub.add_parser("loo", help="leave-one-out evaluation over a cohort")
    add_run_flags(p_loo, need_subject=False)

    p_ph = sub.add_parser("phantom", help="generate a synthetic cohort")
    p_ph.add_argument("--n", type=int, default=20)
    p_ph.add_argument("--seed", type=int, default=0)
    p_ph.add_argument("--dims", default="48,48,48")
    p_ph.add_argument("--semi-axes", dest="semi_axes", default="14,11,9")
    p_ph.add_argument("--amplitude", type=float, default=2.0)
    p_ph.add_argument("--noise", type=float, default=0.05)
    p_ph.add_argument("--out", required=True)

    p_bench = sub.add_parser("bench", help="repeat segment and report per-stage times")
    add_run_flags(p_bench, need_subject=True)
    p_bench.add_argument("--repeats", type=int, default=3)
    p_bench.add_argument(
        "--compare-backends",
        action="store_true",
        help="also time the pure-numpy kernel path in a subprocess",
    )

    sub.add_parser("version", help="print version, kernel backend, and rng scheme")
    return parser


def _build_config(args, need_subject: bool) -> RunConfig:
    cfg = RunConfig()
    if args.config:
        cfg = load_config(args.config, base=cfg)
    for key in (
        "library",
        "subject",
        "roi",
        "k",
        "iterations",
        "init_window",
        "seed",
        "alpha",
        "sigma",
        "epsilon",
        "roi_dilate",
    ):
        value = getattr(args, key, None)
        if value is not None:
            setattr(cfg, key, value)
    if getattr(args, "scales", None):
        cfg.scales = tuple(int(v) for v in args.scales.split(","))
    if getattr(args, "features", None):
        cfg.features = tuple(v.strip() for v in args.features.split(","))
    cfg.validate()
    if not cfg.library:
        raise ConfigError("a library manifest is required (--library or config)")
    if need_subject and not cfg.subject:
        raise ConfigError("a subject volume is required (--subject or config)")
    return cfg


def _load_roi(cfg: RunConfig) -> RoiMask | None:
    if not cfg.roi:
        return None
    return RoiMask(read_labels(cfg.roi).values)


def _meta_extra() -> dict:
    return {"version": __version__, "backend": ACTIVE_BACKEND, "rng": SCHEME}


def _run_segment(cfg: RunConfig, threads: int):
    library = load_library(cfg.library)
    subject = read_volume(cfg.subject)
    return segment(
        subject,
        library,
        config=cfg.estimator_config(),
        search=cfg.search_params(),
        fusion=cfg.fusion_params(),
        roi=_load_roi(cfg),
        roi_dilate=cfg.roi_dilate,
        threads=threads,
        keep_fields=False,
    )


def cmd_segment(args) -> int:
    cfg = _build_config(args, need_subject=True)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    library = load_library(cfg.library)
    subject = read_volume(cfg.subject)
    t0 = time.perf_counter()
    result = segment(
        subject,
        library,
        config=cfg.estimator_config(),
        search=cfg.search_params(),
        fusion=cfg.fusion_params(),
        roi=_load_roi(cfg),
        roi_dilate=cfg.roi_dilate,
        threads=args.threads,
        keep_fields=args.dump_ann,
    )
    wall = time.perf_counter() - t0
    write_volume(out / "segmentation.opal", result.labels)
    write_volume(
        out / "estimator.opal",
        Volume(result.estimator.values.astype(np.float32), result.estimator.spacing),
    )
    (out / "run.meta").write_text(cfg.to_text(extra=_meta_extra()))
    times = [f"threads = {args.threads}"]
    times += [f"time_{k} = {v:.3f}" for k, v in result.timings.items()]
    (out / "run.times").write_text("\n".join(times) + "\n")
    if args.dump_estimators:
        for scale, kind, est in result.per_estimator:
            write_volume(
                out / f"estimator_s{scale}_{kind}.opal",
                Volume(est.values.astype(np.float32), est.spacing),
            )
    if args.dump_ann:
        for scale, kind, match_field in result.fields:
            match_field.dump_text(out / f"field_s{scale}_{kind}.txt")
    print(f"segment ok: {out} wall={wall:.2f}s")
    return 0


def cmd_loo(args) -> int:
    cfg = _build_config(args, need_subject=False)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cohort = load_library(cfg.library)
    if len(cohort) < 2:
        raise ConfigError(f"leave-one-out needs >= 2 subjects, manifest lists {len(cohort)}")
    t0 = time.perf_counter()
    report = leave_one_out(
        cohort,
        config=cfg.estimator_config(),
        search=cfg.search_params(),
        fusion=cfg.fusion_params(),
        roi_dilate=cfg.roi_dilate,
        threads=args.threads,
    )
    wall = time.perf_counter() - t0
    (out / "report.txt").write_text(report.to_text())
    (out / "subjects.csv").write_text(report.to_csv())
    (out / "run.meta").write_text(cfg.to_text(extra=_meta_extra()))
    print(
        f"loo ok: n={len(report.subject_ids)} median_dice={report.median_dice:.4f} "
        f"mean_dice={report.mean_dice:.4f} wall={wall:.1f}s"
    )
    return 0


def cmd_phantom(args) -> int:
    try:
        dims = tuple(int(v) for v in args.dims.split(","))
        semi_axes = tuple(float(v) for v in args.semi_axes.split(","))
        spec = PhantomSpec(
            dims=dims,
            n_subjects=args.n,
            semi_axes=semi_axes,
            deform_amplitude=args.amplitude,
            noise_std=args.noise,
            seed=args.seed,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    t0 = time.perf_counter()
    cohort = generate_cohort(spec)
    manifest = save_cohort(cohort, args.out)
    wall = time.perf_counter() - t0
    print(f"phantom ok: {manifest} subjects={args.n} wall={wall:.1f}s")
    return 0


def _bench_rows(cfg: RunConfig, repeats: int, threads: int) -> list[dict]:
    kernels.warm_up()
    rows = []
    for rep in range(repeats):
        result = _run_segment(cfg, threads)
        rows.append(
            {
                "backend": ACTIVE_BACKEND,
                "repeat": rep,
                "ann_seconds": result.timings["ann_seconds"],
                "fusion_seconds": result.timings["fusion_seconds"],
                "aggregation_seconds": result.timings["aggregation_seconds"],
                "total_seconds": result.timings["total_seconds"],
            }
        )
    return rows


def _write_bench_csv(path: Path, rows: list[dict]) -> None:
    cols = ["backend", "repeat", "ann_seconds", "fusion_seconds", "aggregation_seconds", "total_seconds"]
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=cols)
    writer.writeheader()
    for row in rows:
        writer.writerow({k: (f"{v:.4f}" if isinstance(v, float) else v) for k, v in row.items()})
    path.write_text(buf.getvalue())


def _summarize(rows: list[dict]) -> None:
    for backend in sorted({r["backend"] for r in rows}):
        sel = [r for r in rows if r["backend"] == backend]
        for stage in ("ann_seconds", "fusion_seconds", "aggregation_seconds", "total_seconds"):
            vals = [float(r[stage]) for r in sel]
            print(
                f"bench {backend} {stage}: min={min(vals):.4f}s median={statistics.median(vals):.4f}s"
            )


def cmd_bench(args) -> int:
    if args.repeats < 1:
        raise ConfigError(f"repeats must be >= 1, got {args.repeats}")
    cfg = _build_config(args, need_subject=True)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = _bench_rows(cfg, args.repeats, args.threads)
    if args.compare_backends:
        other = "numpy" if ACTIVE_BACKEND == "numba" else "numba"
        with tempfile.TemporaryDirectory() as tmp:
            env = dict(os.environ, **{ENV_VAR: other})
            cli_args = [
                sys.executable,
                "-m",
                "labelfuse.cli",
                "bench",
                "--library",
                cfg.library,
                "--subject",
                cfg.subject,
                "--out",
                tmp,
                "--repeats",
                str(args.repeats),
                "--threads",
                str(args.threads),
            ]
            for key in ("scales", "features"):
                value = getattr(args, key, None)
                if value:
                    cli_args += [f"--{key}", value]
            proc = subprocess.run(cli_args, env=env, capture_output=True, text=True)
            if proc.returncode != 0:
                raise RuntimeError(f"backend comparison run failed:\n{proc.stderr}")
            with open(Path(tmp) / "bench.csv", newline="") as fh:
                rows += list(csv.DictReader(fh))
    _write_bench_csv(out / "bench.csv", rows)
    (out / "run.meta").write_text(cfg.to_text(extra=_meta_extra()))
    _summarize(rows)
    return 0


def cmd_version(_args) -> int:
    print(f"labelfuse {__version__} backend={ACTIVE_BACKEND} rng={SCHEME}")
    return 0


_COMMANDS = {
    "segment": cmd_segment,
    "loo": cmd_loo,
    "phantom": cmd_phantom,
    "bench": cmd_bench,
    "version": cmd_version,
}


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (OSError, VolumeFormatError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 3
    except Exception as exc:  # noqa: BLE001 - map anything else to the pipeline code
        print(f"pipeline error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
