"""Binary volume container and cohort manifest I/O.

Volume files carry a 40-byte header (magic ``OPALVOL1``, three uint32 dims,
three float32 spacings, a dtype code, reserved zeros) followed by the raw
little-endian data in x-fastest order. dtype 0 is float32 scalar data,
dtype 1 is uint8 labels.

A cohort manifest is a text file with one template per line,
``img=<path> lab=<path>``; line order defines template indices and paths are
resolved relative to the manifest.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Sequence

import numpy as np

from .volume import LabelMap, TemplateLibrary, Volume

MAGIC = b"OPALVOL1"
DTYPE_SCALAR = 0
DTYPE_LABEL = 1

_HEADER = struct.Struct("<8s3I3fB7x")


class VolumeFormatError(ValueError):
    """Malformed volume file: bad magic, dtype code, or payload length."""


def write_volume(path: str | Path, vol: Volume | LabelMap) -> None:
    if isinstance(vol, LabelMap):
        dtype_code = DTYPE_LABEL
        payload = vol.values.reshape(-1).astype("<u1").tobytes()
    elif isinstance(vol, Volume):
        dtype_code = DTYPE_SCALAR
        payload = vol.values.reshape(-1).astype("<f4").tobytes()
    else:
        raise TypeError(f"expected Volume or LabelMap, got {type(vol).__name__}")
    nx, ny, nz = vol.dims
    sx, sy, sz = getattr(vol, "spacing", (1.0, 1.0, 1.0))
    header = _HEADER.pack(MAGIC, nx, ny, nz, sx, sy, sz, dtype_code)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload)


def _read(path: str | Path) -> tuple[int, tuple[int, int, int], tuple[float, float, float], bytes]:
    blob = Path(path).read_bytes()
    if len(blob) < _HEADER.size:
        raise VolumeFormatError(f"{path}: file shorter than the {_HEADER.size}-byte header")
    magic, nx, ny, nz, sx, sy, sz, dtype_code = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise VolumeFormatError(f"{path}: bad magic {magic!r}")
    if dtype_code not in (DTYPE_SCALAR, DTYPE_LABEL):
        raise VolumeFormatError(f"{path}: unknown dtype code {dtype_code}")
    itemsize = 4 if dtype_code == DTYPE_SCALAR else 1
    expected = _HEADER.size + nx * ny * nz * itemsize
    if len(blob) != expected:
        raise VolumeFormatError(f"{path}: expected {expected} bytes, found {len(blob)}")
    return dtype_code, (nx, ny, nz), (sx, sy, sz), blob[_HEADER.size :]


def read_volume(path: str | Path) -> Volume:
    dtype_code, (nx, ny, nz), spacing, payload = _read(path)
    if dtype_code != DTYPE_SCALAR:
        raise VolumeFormatError(f"{path}: expected scalar dtype 0, found {dtype_code}")
    data = np.frombuffer(payload, dtype="<f4").reshape(nz, ny, nx)
    return Volume(data, spacing)


def read_labels(path: str | Path) -> LabelMap:
    dtype_code, (nx, ny, nz), spacing, payload = _read(path)
    if dtype_code != DTYPE_LABEL:
        raise VolumeFormatError(f"{path}: expected label dtype 1, found {dtype_code}")
    data = np.frombuffer(payload, dtype="<u1").reshape(nz, ny, nx)
    return LabelMap(data, spacing)


def write_manifest(path: str | Path, entries: Sequence[tuple[str, str]]) -> None:
    lines = [f"img={img} lab={lab}\n" for img, lab in entries]
    Path(path).write_text("".join(lines))


def read_manifest(path: str | Path) -> list[tuple[Path, Path]]:
    base = Path(path).parent
    pairs = []
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        fields = dict(part.split("=", 1) for part in line.split() if "=" in part)
        if "img" not in fields or "lab" not in fields:
            raise VolumeFormatError(f"{path}:{lineno}: expected 'img=<path> lab=<path>'")
        pairs.append((base / fields["img"], base / fields["lab"]))
    if not pairs:
        raise VolumeFormatError(f"{path}: manifest lists no templates")
    return pairs


def _template_id(img_path: Path) -> str:
    stem = img_path.stem
    return stem[: -len("_img")] if stem.endswith("_img") else stem


def load_library(manifest_path: str | Path) -> TemplateLibrary:
    """Load the templates listed in a cohort manifest."""
    pairs = read_manifest(manifest_path)
    images = tuple(read_volume(img) for img, _ in pairs)
    labels = tuple(read_labels(lab) for _, lab in pairs)
    ids = tuple(_template_id(img) for img, _ in pairs)
    return TemplateLibrary(images=images, labels=labels, ids=ids)


def save_cohort(library: TemplateLibrary, outdir: str | Path) -> Path:
    """Write every template as an (image, labels) file pair plus a manifest."""
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for subject_id, img, lab in zip(library.ids, library.images, library.labels):
        img_name = f"{subject_id}_img.opal"
        lab_name = f"{subject_id}_lab.opal"
        write_volume(out / img_name, img)
        write_volume(out / lab_name, lab)
        entries.append((img_name, lab_name))
    manifest = out / "cohort.meta"
    write_manifest(manifest, entries)
    return manifest
