"""Map files and annotation JSON, implemented from their byte-level contracts.

This package writes files for a pipeline it never imports: the two sides meet
only at the formats.  A map file is laid out as (everything little endian)

    magic   b"FPM1"
    header  <III>  height, width, n_labels
    labels  n_labels x (<H> byte length + utf-8 name)
    data    float32 tensor, (height, width, n_labels), C order

The reader keeps pixels whose channel sum is within 1e-6 of one bit for bit
and renormalizes anything further out, so the writer must deliver sums inside
that band for exported values to survive a round trip unchanged.
"""

import json
import os
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

FPM_MAGIC = b"FPM1"
ANNOTATION_SCHEMA_VERSION = 1
SUM_TOLERANCE = 1e-6


class ExportError(ValueError):
    """Input that cannot be turned into a well-formed file."""


def _atomic_write(path: str | Path, data: bytes) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as f:
        f.write(data)
    os.replace(tmp, path)


# ---------------------------------------------------------------------------
# .fpm writing
# ---------------------------------------------------------------------------


def check_labels(labels) -> tuple[str, ...]:
    """The reader's label rules: 'bg' first, one face, one hand, objects after.

    Files violating these are rejected on load, so they are writer errors.
    """
    names = tuple(str(n) for n in labels)
    if len(set(names)) != len(names):
        raise ExportError(f"label names must be unique, got {names}")
    if not names or names[0] != "bg":
        raise ExportError("label index 0 must be 'bg'")
    for part in ("bg", "face", "hand"):
        if names.count(part) != 1:
            raise ExportError(f"label set needs exactly one {part!r}")
    if len(names) < 4:
        raise ExportError("label set needs at least one object label")
    return names


def normalized_values(array, n_labels: int) -> np.ndarray:
    """Validate an (H, W, L) array and renormalize every pixel to sum to one.

    Returns float32 whose pixel sums all land within SUM_TOLERANCE of one, so
    the reader will not touch them.  One float64 divide almost always
    suffices; the repair loop below mops up pixels whose float32 rounding
    still leaves them outside the band.
    """
    arr = np.asarray(array, dtype=np.float64)
    if arr.ndim != 3:
        raise ExportError(f"map array must be (H, W, L), got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ExportError(f"map dimensions must be at least 1x1, got {arr.shape}")
    if arr.shape[2] != n_labels:
        raise ExportError(
            f"array has {arr.shape[2]} channels but {n_labels} labels were given"
        )
    if not np.isfinite(arr).all():
        raise ExportError("map array contains NaN or Inf")
    if arr.min() < 0.0:
        raise ExportError(f"map values must be >= 0, found {float(arr.min()):.6g}")
    sums = arr.sum(axis=2)
    if sums.min() <= 0.0:
        y, x = np.unravel_index(int(sums.argmin()), sums.shape)
        raise ExportError(f"pixel ({x}, {y}) has zero mass: nothing to normalize")
    out = (arr / sums[:, :, None]).astype(np.float32)
    for _ in range(4):
        off = np.abs(out.sum(axis=2, dtype=np.float64) - 1.0)
        drifted = off > SUM_TOLERANCE
        if not drifted.any():
            return out
        rows = out[drifted].astype(np.float64)
        out[drifted] = (rows / rows.sum(axis=1)[:, None]).astype(np.float32)
    raise ExportError("pixel sums failed to settle within 1e-6 of one")


def fpm_bytes(values: np.ndarray, labels) -> bytes:
    """Serialize float32 (H, W, L) values; the caller guarantees valid sums."""
    names = check_labels(labels)
    arr = np.asarray(values, dtype="<f4")
    if arr.ndim != 3 or arr.shape[2] != len(names):
        raise ExportError(
            f"values must be (H, W, {len(names)}), got shape {arr.shape}"
        )
    parts = [FPM_MAGIC, struct.pack("<III", arr.shape[0], arr.shape[1], len(names))]
    for name in names:
        enc = name.encode("utf-8")
        parts.append(struct.pack("<H", len(enc)) + enc)
    parts.append(arr.tobytes())
    return b"".join(parts)


def export_fpm(array, labels, path: str | Path) -> np.ndarray:
    """Normalize an (H, W, L) array per pixel and write it as a map file.

    Returns the float32 values actually written, which the consuming
    pipeline's loader reproduces bit for bit.
    """
    names = check_labels(labels)
    values = normalized_values(array, len(names))
    _atomic_write(path, fpm_bytes(values, names))
    return values


@dataclass(frozen=True)
class ExportJob:
    """One map to produce: where the array comes from and where it goes.

    source is a .npy path or a zero-argument callable returning the array
    (the hook for driving a live model).  With a key like
    "scene_00004__full", path is a directory and the file lands under the
    replay-backend naming scheme <image id>__<window tag>.fpm.
    """

    source: str | Path | Callable[[], np.ndarray]
    labels: tuple[str, ...]
    path: str | Path
    key: str | None = None


def _load_array(source) -> np.ndarray:
    if callable(source):
        return np.asarray(source())
    try:
        return np.load(source, allow_pickle=False)
    except OSError as e:
        raise ExportError(f"cannot read array file {source}: {e}") from e
    except ValueError as e:
        raise ExportError(f"bad array file {source}: {e}") from e


def run_export_job(job: ExportJob) -> Path:
    array = _load_array(job.source)
    if job.key is not None:
        if "__" not in job.key:
            raise ExportError(
                f"key must look like '<image id>__<window tag>', got {job.key!r}"
            )
        out_dir = Path(job.path)
        out_dir.mkdir(parents=True, exist_ok=True)
        target = out_dir / f"{job.key}.fpm"
    else:
        target = Path(job.path)
    export_fpm(array, job.labels, target)
    return target


# ---------------------------------------------------------------------------
# Annotation JSON
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ObjectShape:
    label: str
    box: tuple[int, int, int, int]  # x0, y0, x1, y1, half open
    mask: np.ndarray  # bool, (box height, box width)


@dataclass(frozen=True)
class Annotation:
    image_id: str
    class_name: str
    face: tuple[int, int, int, int] | None
    hands: tuple[tuple[int, int, int, int], ...]
    objects: tuple[ObjectShape, ...]


def _box_from_list(v, what: str) -> tuple[int, int, int, int]:
    if not isinstance(v, (list, tuple)) or len(v) != 4:
        raise ExportError(f"{what} must be [x0, y0, x1, y1], got {v!r}")
    try:
        x0, y0, x1, y1 = (int(c) for c in v)
    except (TypeError, ValueError) as e:
        raise ExportError(f"invalid {what}: {e}") from e
    if x0 >= x1 or y0 >= y1:
        raise ExportError(f"empty {what} {(x0, y0, x1, y1)}")
    return (x0, y0, x1, y1)


def decode_runs(runs, height: int, width: int) -> np.ndarray:
    """Alternating off/on run lengths, row major, starting with an off run."""
    total = sum(runs)
    if total != height * width:
        raise ExportError(
            f"run-length data covers {total} pixels, mask needs {height * width}"
        )
    flat = np.zeros(total, dtype=bool)
    pos = 0
    value = False
    for run in runs:
        if run < 0:
            raise ExportError("negative run length")
        if value:
            flat[pos : pos + run] = True
        pos += run
        value = not value
    return flat.reshape(height, width)


def parse_annotation(d: dict) -> Annotation:
    if not isinstance(d, dict):
        raise ExportError("annotation must be a JSON object")
    if d.get("asv") != ANNOTATION_SCHEMA_VERSION:
        raise ExportError(
            f"unsupported annotation schema version {d.get('asv')!r}, "
            f"expected {ANNOTATION_SCHEMA_VERSION}"
        )
    for key in ("id", "class", "hands", "objects"):
        if key not in d:
            raise ExportError(f"annotation missing required field {key!r}")
    face = None if d.get("face") is None else _box_from_list(d["face"], "face box")
    hands = tuple(_box_from_list(b, "hand box") for b in d["hands"])
    objects = []
    for od in d["objects"]:
        box = _box_from_list(od.get("bbox"), f"object bbox ({od.get('label')!r})")
        mask = decode_runs(od.get("mask_rle", []), box[3] - box[1], box[2] - box[0])
        objects.append(ObjectShape(label=str(od["label"]), box=box, mask=mask))
    return Annotation(
        image_id=str(d["id"]),
        class_name=str(d["class"]),
        face=face,
        hands=hands,
        objects=tuple(objects),
    )


def load_annotation(path: str | Path) -> Annotation:
    try:
        with open(path, "rb") as f:
            raw = f.read()
    except OSError as e:
        raise ExportError(f"cannot read annotation {path}: {e}") from e
    try:
        d = json.loads(raw)
    except json.JSONDecodeError as e:
        raise ExportError(f"malformed annotation JSON {path} at byte {e.pos}") from e
    return parse_annotation(d)
