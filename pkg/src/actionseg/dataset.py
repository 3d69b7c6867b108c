"""Scene annotations, on-disk formats, and the synthetic scene generator.

On-disk artifacts:
  - images: binary PPM (P6) / PGM (P5)
  - annotations: versioned JSON ("asv": 1) with run-length-encoded masks
  - probability maps: .fpm, a little-endian binary tensor format

The generator renders small desk-scale scenes: a textured background, a face
ellipse, one or two hand blobs, distractor clutter, and a single small action
object whose shape family is determined by the action class.  Face and hand
layout is class-independent on purpose: class identity lives entirely in the
object, so global appearance alone is a weak cue.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import (
    BBox,
    ContractError,
    DataError,
    ImageU8,
    LabelSet,
    ProbMap,
    RegionMask,
    derive_rng,
)

ANNOTATION_SCHEMA_VERSION = 1
FPM_MAGIC = b"FPM1"

SHAPE_FAMILIES = ("stick", "diskstick", "bar", "lshape", "ring")


# ---------------------------------------------------------------------------
# Annotation types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ObjectAnnotation:
    """One annotated action object: label string, tight bbox, exact mask."""

    label: str
    bbox: BBox
    mask: np.ndarray

    def __post_init__(self) -> None:
        mask = np.ascontiguousarray(np.asarray(self.mask, dtype=bool))
        if mask.shape != (self.bbox.height, self.bbox.width):
            raise ContractError(
                f"object mask shape {mask.shape} does not match bbox "
                f"{self.bbox.height}x{self.bbox.width}"
            )
        if not mask.any():
            raise ContractError(f"object {self.label!r} has an empty mask")
        mask.flags.writeable = False
        object.__setattr__(self, "mask", mask)

    def to_region(self, labels: LabelSet) -> RegionMask:
        return RegionMask(
            bbox=self.bbox,
            mask=self.mask,
            channel=labels.index_of(self.label),
            source="ground-truth",
        )


@dataclass(frozen=True)
class SceneAnnotation:
    """Ground truth for one image: class, face box, hand boxes, object masks."""

    image_id: str
    class_name: str
    face: BBox | None
    hands: tuple[BBox, ...]
    objects: tuple[ObjectAnnotation, ...]

    def object_regions(self, labels: LabelSet) -> list[RegionMask]:
        return [o.to_region(labels) for o in self.objects]

    def object_boxes(self) -> list[BBox]:
        return [o.bbox for o in self.objects]


# ---------------------------------------------------------------------------
# Run-length encoding (over the bbox, row-major, first run counts zeros)
# ---------------------------------------------------------------------------


def mask_to_rle(mask: np.ndarray) -> list[int]:
    flat = np.asarray(mask, dtype=bool).ravel()
    if flat.size == 0:
        return []
    changes = np.nonzero(np.diff(flat))[0] + 1
    bounds = np.concatenate(([0], changes, [flat.size]))
    runs = np.diff(bounds).tolist()
    if flat[0]:  # leading zero-run of length 0 keeps the alternation convention
        runs = [0] + runs
    return [int(r) for r in runs]


def rle_to_mask(runs: list[int], height: int, width: int) -> np.ndarray:
    total = sum(runs)
    if total != height * width:
        raise DataError(
            f"run-length data covers {total} pixels, mask needs {height * width}"
        )
    flat = np.zeros(total, dtype=bool)
    pos = 0
    value = False
    for run in runs:
        if run < 0:
            raise DataError("negative run length")
        if value:
            flat[pos : pos + run] = True
        pos += run
        value = not value
    return flat.reshape(height, width)


# ---------------------------------------------------------------------------
# Annotation JSON
# ---------------------------------------------------------------------------


def annotation_to_dict(ann: SceneAnnotation) -> dict:
    return {
        "asv": ANNOTATION_SCHEMA_VERSION,
        "id": ann.image_id,
        "class": ann.class_name,
        "face": list(ann.face.as_tuple()) if ann.face is not None else None,
        "hands": [list(b.as_tuple()) for b in ann.hands],
        "objects": [
            {
                "label": o.label,
                "bbox": list(o.bbox.as_tuple()),
                "mask_rle": mask_to_rle(o.mask),
            }
            for o in ann.objects
        ],
    }


def _bbox_from_list(v, what: str) -> BBox:
    if not isinstance(v, (list, tuple)) or len(v) != 4:
        raise DataError(f"{what} must be [x0, y0, x1, y1], got {v!r}")
    try:
        return BBox(int(v[0]), int(v[1]), int(v[2]), int(v[3]))
    except (ContractError, TypeError, ValueError) as e:
        raise DataError(f"invalid {what}: {e}") from e


def annotation_from_dict(d: dict) -> SceneAnnotation:
    if not isinstance(d, dict):
        raise DataError("annotation must be a JSON object")
    if d.get("asv") != ANNOTATION_SCHEMA_VERSION:
        raise DataError(
            f"unsupported annotation schema version {d.get('asv')!r}, "
            f"expected {ANNOTATION_SCHEMA_VERSION}"
        )
    for key in ("id", "class", "hands", "objects"):
        if key not in d:
            raise DataError(f"annotation missing required field {key!r}")
    face = None if d.get("face") is None else _bbox_from_list(d["face"], "face box")
    hands = tuple(_bbox_from_list(b, "hand box") for b in d["hands"])
    objects = []
    for od in d["objects"]:
        bbox = _bbox_from_list(od.get("bbox"), f"object bbox ({od.get('label')!r})")
        mask = rle_to_mask(od.get("mask_rle", []), bbox.height, bbox.width)
        objects.append(ObjectAnnotation(label=str(od["label"]), bbox=bbox, mask=mask))
    return SceneAnnotation(
        image_id=str(d["id"]),
        class_name=str(d["class"]),
        face=face,
        hands=hands,
        objects=tuple(objects),
    )


def write_annotation(path: str | Path, ann: SceneAnnotation) -> None:
    payload = json.dumps(annotation_to_dict(ann), sort_keys=True, indent=1)
    _atomic_write(path, payload.encode("utf-8"))


def read_annotation(path: str | Path) -> SceneAnnotation:
    try:
        with open(path, "rb") as f:
            raw = f.read()
    except OSError as e:
        raise DataError(f"cannot read annotation {path}: {e}") from e
    try:
        d = json.loads(raw)
    except json.JSONDecodeError as e:
        raise DataError(f"malformed annotation JSON {path} at byte {e.pos}") from e
    return annotation_from_dict(d)


# ---------------------------------------------------------------------------
# PPM/PGM images
# ---------------------------------------------------------------------------


def _atomic_write(path: str | Path, data: bytes) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as f:
        f.write(data)
    os.replace(tmp, path)


def write_image(path: str | Path, img: ImageU8) -> None:
    if img.channels == 3:
        header = f"P6\n{img.width} {img.height}\n255\n".encode("ascii")
    else:
        header = f"P5\n{img.width} {img.height}\n255\n".encode("ascii")
    _atomic_write(path, header + img.data.tobytes())


class _Tokens:
    """Whitespace/comment-aware netpbm header scanner that tracks byte offsets."""

    def __init__(self, raw: bytes, path):
        self.raw = raw
        self.pos = 0
        self.path = path

    def fail(self, why: str):
        raise DataError(f"{self.path}: {why} at byte {self.pos}")

    def next_token(self) -> bytes:
        raw, n = self.raw, len(self.raw)
        while self.pos < n:
            c = raw[self.pos : self.pos + 1]
            if c == b"#":
                while self.pos < n and raw[self.pos : self.pos + 1] != b"\n":
                    self.pos += 1
            elif c.isspace():
                self.pos += 1
            else:
                break
        if self.pos >= n:
            self.fail("unexpected end of header")
        start = self.pos
        while self.pos < n and not raw[self.pos : self.pos + 1].isspace():
            self.pos += 1
        return raw[start : self.pos]

    def next_int(self, what: str) -> int:
        tok = self.next_token()
        if not tok.isdigit():
            self.pos -= len(tok)
            self.fail(f"expected {what}, got {tok!r}")
        return int(tok)


def read_image(path: str | Path) -> ImageU8:
    try:
        with open(path, "rb") as f:
            raw = f.read()
    except OSError as e:
        raise DataError(f"cannot read image {path}: {e}") from e
    t = _Tokens(raw, path)
    magic = t.next_token()
    if magic not in (b"P6", b"P5"):
        t.pos = 0
        t.fail(f"bad magic {magic!r}, expected P6 or P5")
    channels = 3 if magic == b"P6" else 1
    width = t.next_int("width")
    height = t.next_int("height")
    maxval = t.next_int("maxval")
    if maxval != 255:
        t.fail(f"unsupported maxval {maxval}, expected 255")
    t.pos += 1  # single whitespace byte after maxval
    need = width * height * channels
    pixels = raw[t.pos : t.pos + need]
    if len(pixels) != need:
        raise DataError(
            f"{path}: truncated pixel data at byte {t.pos + len(pixels)}: "
            f"expected {need} bytes, got {len(pixels)}"
        )
    data = np.frombuffer(pixels, dtype=np.uint8).reshape(height, width, channels)
    return ImageU8(data.copy())


# ---------------------------------------------------------------------------
# .fpm probability-map files
# ---------------------------------------------------------------------------


def fpm_bytes(pmap: ProbMap) -> bytes:
    parts = [FPM_MAGIC, struct.pack("<III", pmap.height, pmap.width, len(pmap.labels))]
    for name in pmap.labels.names:
        enc = name.encode("utf-8")
        parts.append(struct.pack("<H", len(enc)) + enc)
    parts.append(pmap.data.astype("<f4").tobytes())
    return b"".join(parts)


def write_fpm(path: str | Path, pmap: ProbMap) -> None:
    _atomic_write(path, fpm_bytes(pmap))


def read_fpm(path: str | Path) -> ProbMap:
    try:
        with open(path, "rb") as f:
            raw = f.read()
    except OSError as e:
        raise DataError(f"cannot read map {path}: {e}") from e
    if raw[:4] != FPM_MAGIC:
        raise DataError(f"{path}: bad magic {raw[:4]!r} at byte 0, expected {FPM_MAGIC!r}")
    if len(raw) < 16:
        raise DataError(f"{path}: truncated header at byte {len(raw)}")
    height, width, n_labels = struct.unpack_from("<III", raw, 4)
    pos = 16
    names = []
    for i in range(n_labels):
        if pos + 2 > len(raw):
            raise DataError(f"{path}: truncated label table at byte {pos}")
        (n,) = struct.unpack_from("<H", raw, pos)
        pos += 2
        if pos + n > len(raw):
            raise DataError(f"{path}: truncated label name {i} at byte {pos}")
        names.append(raw[pos : pos + n].decode("utf-8"))
        pos += n
    need = height * width * n_labels * 4
    if len(raw) - pos != need:
        raise DataError(
            f"{path}: payload at byte {pos} has {len(raw) - pos} bytes, "
            f"expected {need}"
        )
    data = np.frombuffer(raw, dtype="<f4", count=height * width * n_labels, offset=pos)
    try:
        labels = LabelSet(tuple(names))
        return ProbMap(data.reshape(height, width, n_labels).copy(), labels)
    except ContractError as e:
        raise DataError(f"{path}: {e}") from e


# ---------------------------------------------------------------------------
# Dataset directory layout
# ---------------------------------------------------------------------------


def scene_id_for(index: int) -> str:
    return f"scene_{index:05d}"


def image_path(data_dir: str | Path, image_id: str) -> Path:
    return Path(data_dir) / "images" / f"{image_id}.ppm"


def annotation_path(data_dir: str | Path, image_id: str) -> Path:
    return Path(data_dir) / "annotations" / f"{image_id}.json"


def write_scene(data_dir: str | Path, img: ImageU8, ann: SceneAnnotation) -> None:
    data_dir = Path(data_dir)
    (data_dir / "images").mkdir(parents=True, exist_ok=True)
    (data_dir / "annotations").mkdir(parents=True, exist_ok=True)
    write_image(image_path(data_dir, ann.image_id), img)
    write_annotation(annotation_path(data_dir, ann.image_id), ann)


def load_scene(data_dir: str | Path, image_id: str) -> tuple[ImageU8, SceneAnnotation]:
    return (
        read_image(image_path(data_dir, image_id)),
        read_annotation(annotation_path(data_dir, image_id)),
    )


def list_scene_ids(data_dir: str | Path) -> list[str]:
    ann_dir = Path(data_dir) / "annotations"
    if not ann_dir.is_dir():
        raise DataError(f"no annotations directory under {data_dir}")
    return sorted(p.stem for p in ann_dir.glob("*.json"))


def split_scene_ids(ids: list[str]) -> tuple[list[str], list[str]]:
    """Deterministic disjoint train/test split: even/odd position in sorted order."""
    ordered = sorted(ids)
    return ordered[0::2], ordered[1::2]


def dataset_class_names(annotations) -> tuple[str, ...]:
    return tuple(sorted({a.class_name for a in annotations}))


def dataset_label_set(annotations) -> LabelSet:
    names = sorted({o.label for a in annotations for o in a.objects})
    if not names:
        raise DataError("dataset has no annotated objects, cannot build a label set")
    return LabelSet.with_objects(names)


# ---------------------------------------------------------------------------
# Synthetic scene generation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SynthSpec:
    """Parameters of the synthetic benchmark generator."""

    classes: int = 5
    side: int = 128
    per_class: int = 40
    seed: int = 0
    clutter: int = 3
    size_range: tuple[float, float] = (0.07, 0.13)

    def __post_init__(self) -> None:
        if not (2 <= self.classes <= len(SHAPE_FAMILIES)):
            raise ContractError(
                f"classes must be in [2, {len(SHAPE_FAMILIES)}], got {self.classes}"
            )
        if self.side < 64:
            raise ContractError(f"image side must be >= 64, got {self.side}")
        if self.per_class < 1:
            raise ContractError("per_class must be >= 1")
        lo, hi = self.size_range
        if not (0 < lo <= hi < 1):
            raise ContractError(f"bad object size range {self.size_range}")
        if self.clutter < 0:
            raise ContractError("clutter must be >= 0")

    @property
    def class_names(self) -> tuple[str, ...]:
        return SHAPE_FAMILIES[: self.classes]

    @property
    def total(self) -> int:
        return self.classes * self.per_class

    def label_set(self) -> LabelSet:
        return LabelSet.with_objects(tuple(f"obj_{n}" for n in self.class_names))


def _ellipse_mask(dims, cx, cy, rx, ry) -> np.ndarray:
    h, w = dims
    ys = np.arange(h)[:, None]
    xs = np.arange(w)[None, :]
    return ((xs - cx) / rx) ** 2 + ((ys - cy) / ry) ** 2 <= 1.0


def _tight_bbox(mask: np.ndarray) -> BBox:
    ys, xs = np.nonzero(mask)
    return BBox(int(xs.min()), int(ys.min()), int(xs.max()) + 1, int(ys.max()) + 1)


def _shape_stencil(family: str, size: int) -> np.ndarray:
    """Boolean stencil for one object family, roughly `size` pixels across."""
    s = max(6, int(size))
    if family == "stick":
        t = max(1, round(0.20 * s))
        ys = np.arange(s)[:, None]
        xs = np.arange(s)[None, :]
        sten = np.abs(xs - ys) <= t
    elif family == "diskstick":
        w = max(5, round(0.55 * s))
        sten = np.zeros((s, w), dtype=bool)
        r = (w - 1) / 2.0
        sten |= _ellipse_mask((s, w), r, r, r + 0.2, r + 0.2)
        t = max(2, round(0.35 * w))
        x0 = (w - t) // 2
        sten[int(r) :, x0 : x0 + t] = True
    elif family == "bar":
        h = max(3, round(0.40 * s))
        sten = np.ones((h, s), dtype=bool)
    elif family == "lshape":
        w = max(5, round(0.80 * s))
        sten = np.zeros((s, w), dtype=bool)
        sten[:, : max(2, round(0.30 * w))] = True
        sten[s - max(2, round(0.25 * s)) :, :] = True
    elif family == "ring":
        sten = np.zeros((s, s), dtype=bool)
        c = (s - 1) / 2.0
        outer = s / 2.0
        inner = 0.52 * outer
        ys = np.arange(s)[:, None]
        xs = np.arange(s)[None, :]
        d2 = (xs - c) ** 2 + (ys - c) ** 2
        sten = (d2 <= outer**2) & (d2 >= inner**2)
    else:
        raise ContractError(f"unknown shape family {family!r}")
    # tight-crop so the stencil's bbox is exact regardless of geometry rounding
    ys, xs = np.nonzero(sten)
    return sten[ys.min() : ys.max() + 1, xs.min() : xs.max() + 1]


def _paint(canvas: np.ndarray, y0: int, x0: int, stencil: np.ndarray, color) -> None:
    h, w = stencil.shape
    canvas[y0 : y0 + h, x0 : x0 + w][stencil] = color


def _place_inside(side: int, sh: int, sw: int, cy: float, cx: float) -> tuple[int, int]:
    y0 = int(np.clip(round(cy - sh / 2.0), 0, side - sh))
    x0 = int(np.clip(round(cx - sw / 2.0), 0, side - sw))
    return y0, x0


def _value_noise(rng, side: int) -> np.ndarray:
    coarse = rng.uniform(0.0, 1.0, size=(side // 16 + 2, side // 16 + 2))
    ys = np.linspace(0, coarse.shape[0] - 1.001, side)
    xs = np.linspace(0, coarse.shape[1] - 1.001, side)
    y0 = ys.astype(int)
    x0 = xs.astype(int)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    v = (
        coarse[np.ix_(y0, x0)] * (1 - fy) * (1 - fx)
        + coarse[np.ix_(y0, x0 + 1)] * (1 - fy) * fx
        + coarse[np.ix_(y0 + 1, x0)] * fy * (1 - fx)
        + coarse[np.ix_(y0 + 1, x0 + 1)] * fy * fx
    )
    return v


def _dark_color(rng) -> np.ndarray:
    return rng.integers(25, 105, size=3).astype(np.float64)


def generate_scene(spec: SynthSpec, index: int) -> tuple[ImageU8, SceneAnnotation]:
    """Render scene `index` deterministically from (spec.seed, index)."""
    if not (0 <= index < spec.total):
        raise ContractError(f"scene index {index} outside [0, {spec.total})")
    rng = derive_rng(spec.seed, "scene", str(index))
    side = spec.side
    cls = index % spec.classes
    family = spec.class_names[cls]

    # background: low-contrast value noise with a slight color cast
    base = 108.0 + 40.0 * _value_noise(rng, side)
    tint = rng.uniform(-6.0, 6.0, size=3)
    canvas = base[:, :, None] + tint[None, None, :]

    # clutter: dark distractor shapes drawn under the actors; they never enter
    # the annotation, so they only perturb appearance features
    for _ in range(spec.clutter):
        kind = rng.choice(["disk", "rect", "shape"])
        dsize = int(round(rng.uniform(*spec.size_range) * side))
        if kind == "disk":
            r = max(2, dsize // 2)
            sten = _ellipse_mask((2 * r + 1, 2 * r + 1), r, r, r, r)
        elif kind == "rect":
            sten = np.ones((max(3, dsize // 2), max(3, dsize)), dtype=bool)
        else:
            sten = _shape_stencil(str(rng.choice(list(SHAPE_FAMILIES))), dsize)
        cy, cx = rng.uniform(0, side), rng.uniform(0, side)
        y0, x0 = _place_inside(side, sten.shape[0], sten.shape[1], cy, cx)
        _paint(canvas, y0, x0, sten, _dark_color(rng))

    # face: ellipse in the upper middle, same layout distribution for every class
    frx = side * rng.uniform(0.11, 0.16)
    fry = side * rng.uniform(0.13, 0.19)
    fcx = side * rng.uniform(0.40, 0.60)
    fcy = side * rng.uniform(0.26, 0.38)
    face_mask = _ellipse_mask((side, side), fcx, fcy, frx, fry)
    skin = np.array([205.0, 172.0, 150.0]) + rng.uniform(-14.0, 14.0, size=3)
    canvas[face_mask] = skin
    face_box = _tight_bbox(face_mask)

    # hands: one or two smaller skin blobs below the face
    hands = []
    hand_centers = []
    for hx in rng.permutation([-1.0, 1.0])[: int(rng.integers(1, 3))]:
        hrx = side * rng.uniform(0.05, 0.08)
        hry = side * rng.uniform(0.05, 0.08)
        hcx = np.clip(fcx + hx * side * rng.uniform(0.12, 0.22), hrx + 1, side - hrx - 2)
        hcy = np.clip(fcy + side * rng.uniform(0.18, 0.34), hry + 1, side - hry - 2)
        hmask = _ellipse_mask((side, side), hcx, hcy, hrx, hry)
        canvas[hmask] = skin + rng.uniform(-10.0, 10.0, size=3)
        if hmask.any():
            hands.append(_tight_bbox(hmask))
            hand_centers.append((hcy, hcx))

    # the action object: class-distinctive shape near the mouth or a hand
    osize = int(round(rng.uniform(*spec.size_range) * side))
    stencil = _shape_stencil(family, osize)
    if hand_centers and rng.random() < 0.5:
        ay, ax = hand_centers[0]
    else:
        ay, ax = fcy + 0.62 * fry, fcx
    ay += side * rng.uniform(-0.03, 0.05)
    ax += side * rng.uniform(-0.05, 0.05)
    oy0, ox0 = _place_inside(side, stencil.shape[0], stencil.shape[1], ay, ax)
    _paint(canvas, oy0, ox0, stencil, _dark_color(rng))
    obj = ObjectAnnotation(
        label=f"obj_{family}",
        bbox=BBox(ox0, oy0, ox0 + stencil.shape[1], oy0 + stencil.shape[0]),
        mask=stencil,
    )

    img = ImageU8(np.clip(np.floor(canvas + 0.5), 0, 255).astype(np.uint8))
    ann = SceneAnnotation(
        image_id=scene_id_for(index),
        class_name=family,
        face=face_box,
        hands=tuple(hands),
        objects=(obj,),
    )
    return img, ann


def generate_dataset(spec: SynthSpec, out_dir: str | Path, jobs: int = 1) -> list[str]:
    """Write all scenes of `spec` under `out_dir`; returns the scene ids."""
    from .parallel import parallel_map

    results = parallel_map(
        _generate_and_write, [(spec, i, str(out_dir)) for i in range(spec.total)], jobs
    )
    return sorted(results)


def _generate_and_write(args) -> str:
    spec, index, out_dir = args
    img, ann = generate_scene(spec, index)
    write_scene(out_dir, img, ann)
    return ann.image_id
