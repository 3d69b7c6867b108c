"""Shared geometry, image, and probability-map types with exact numeric conventions.

Boxes are half-open integer pixel rectangles; all area math is exact integer
pixel counts.  Probability maps are float32, channel-innermost, and per-pixel
renormalized on construction.  All types are immutable after construction and
all operations here are pure, so values can be shared freely across workers.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


class ContractError(ValueError):
    """A caller violated an interface precondition or invariant."""


class DataError(ValueError):
    """External data (file, annotation, stored map) is missing or malformed."""


# Per-pixel channel sums must land inside this band before normalization;
# anything further off is treated as corrupt input rather than noise.
PROBMAP_PRE_TOLERANCE = 1e-3
# Pixels already summing to 1 within this bound are left untouched so that
# re-wrapping valid data is bit-exact.
PROBMAP_SUM_TOLERANCE = 1e-6

REGION_SOURCES = ("pred", "maxima", "ground-truth")


def round_half_up(v: float) -> int:
    """Round with ties away from zero-half, i.e. floor(v + 0.5)."""
    return int(math.floor(v + 0.5))


def derive_seed(seed: int, *tags: str) -> int:
    """Stable 128-bit sub-seed from a root seed and string tags.

    Every random stream in the pipeline is derived this way, so per-image and
    per-purpose streams are independent of each other and of iteration order.
    """
    digest = hashlib.sha256("|".join([str(seed), *tags]).encode("utf-8")).digest()
    return int.from_bytes(digest[:16], "little")


def derive_rng(seed: int, *tags: str) -> np.random.Generator:
    """Generator seeded via `derive_seed`; identical tags give identical streams."""
    return np.random.default_rng(derive_seed(seed, *tags))


@dataclass(frozen=True)
class LabelSet:
    """Ordered segmentation labels: background, body parts, then objects.

    Index 0 is always "bg"; "face" and "hand" appear exactly once each; the
    remaining labels are the object categories.
    """

    names: tuple[str, ...]

    def __post_init__(self) -> None:
        names = tuple(self.names)
        object.__setattr__(self, "names", names)
        if len(set(names)) != len(names):
            raise ContractError(f"label names must be unique, got {names}")
        if not names or names[0] != "bg":
            raise ContractError("label index 0 must be 'bg'")
        for part in ("bg", "face", "hand"):
            if names.count(part) != 1:
                raise ContractError(f"label set needs exactly one {part!r}")
        if len(names) < 4:
            raise ContractError("label set needs at least one object label")

    @classmethod
    def with_objects(cls, object_names: Sequence[str]) -> "LabelSet":
        return cls(("bg", "face", "hand") + tuple(object_names))

    @property
    def background(self) -> int:
        return 0

    @property
    def face(self) -> int:
        return self.names.index("face")

    @property
    def hand(self) -> int:
        return self.names.index("hand")

    @property
    def object_indices(self) -> tuple[int, ...]:
        body = {0, self.face, self.hand}
        return tuple(i for i in range(len(self.names)) if i not in body)

    @property
    def object_names(self) -> tuple[str, ...]:
        return tuple(self.names[i] for i in self.object_indices)

    def index_of(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise ContractError(f"unknown label {name!r}") from None

    def __len__(self) -> int:
        return len(self.names)


@dataclass(frozen=True)
class BBox:
    """Half-open pixel rectangle [x0, x1) x [y0, y1)."""

    x0: int
    y0: int
    x1: int
    y1: int

    def __post_init__(self) -> None:
        for v in (self.x0, self.y0, self.x1, self.y1):
            if not isinstance(v, (int, np.integer)):
                raise ContractError(f"box coordinates must be integers, got {v!r}")
        object.__setattr__(self, "x0", int(self.x0))
        object.__setattr__(self, "y0", int(self.y0))
        object.__setattr__(self, "x1", int(self.x1))
        object.__setattr__(self, "y1", int(self.y1))
        if self.x0 >= self.x1 or self.y0 >= self.y1:
            raise ContractError(f"empty box {self.as_tuple()}")

    def as_tuple(self) -> tuple[int, int, int, int]:
        return (self.x0, self.y0, self.x1, self.y1)

    @property
    def width(self) -> int:
        return self.x1 - self.x0

    @property
    def height(self) -> int:
        return self.y1 - self.y0

    @property
    def area(self) -> int:
        return self.width * self.height

    @property
    def center(self) -> tuple[float, float]:
        return ((self.x0 + self.x1) / 2.0, (self.y0 + self.y1) / 2.0)

    def clipped(self, dims: tuple[int, int]) -> "BBox | None":
        """Intersect with an image of (height, width) dims; None if empty."""
        h, w = dims
        x0, y0 = max(self.x0, 0), max(self.y0, 0)
        x1, y1 = min(self.x1, w), min(self.y1, h)
        if x0 >= x1 or y0 >= y1:
            return None
        return BBox(x0, y0, x1, y1)


def bbox_iou(a: BBox, b: BBox) -> float:
    """Intersection-over-union by pixel area; disjoint boxes give 0."""
    ix = min(a.x1, b.x1) - max(a.x0, b.x0)
    iy = min(a.y1, b.y1) - max(a.y0, b.y0)
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    return inter / float(a.area + b.area - inter)


def scale_bbox(b: BBox, factor: float, bounds: tuple[int, int] | None = None) -> BBox:
    """Scale a box about its center, rounding to integer pixels.

    With `bounds` = (height, width) the result is clipped to the image and, if
    clipping empties it, grown back to a 1x1 box at the nearest valid pixel.
    Without bounds the scaled box is returned as-is and may extend outside any
    image (callers that pool over it treat outside pixels as invalid).
    """
    if factor <= 0:
        raise ContractError(f"scale factor must be positive, got {factor}")
    cx, cy = b.center
    hw = b.width * factor / 2.0
    hh = b.height * factor / 2.0
    x0, x1 = round_half_up(cx - hw), round_half_up(cx + hw)
    y0, y1 = round_half_up(cy - hh), round_half_up(cy + hh)
    if x1 <= x0:
        x1 = x0 + 1
    if y1 <= y0:
        y1 = y0 + 1
    if bounds is None:
        return BBox(x0, y0, x1, y1)
    h, w = bounds
    x0, x1 = max(x0, 0), min(x1, w)
    y0, y1 = max(y0, 0), min(y1, h)
    if x0 >= x1:  # degenerate after clip: 1x1 at the nearest valid position
        x0 = min(max(x0, 0), w - 1)
        x1 = x0 + 1
    if y0 >= y1:
        y0 = min(max(y0, 0), h - 1)
        y1 = y0 + 1
    return BBox(x0, y0, x1, y1)


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class ImageU8:
    """Row-major 8-bit image, (height, width, channels) with 1 or 3 channels."""

    data: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.data)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if arr.ndim != 3 or arr.shape[2] not in (1, 3):
            raise ContractError(f"image must be (H, W, 1|3), got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ContractError("image dimensions must be at least 1x1")
        if arr.dtype != np.uint8:
            raise ContractError(f"image dtype must be uint8, got {arr.dtype}")
        arr = np.ascontiguousarray(arr)
        object.__setattr__(self, "data", _freeze(arr))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @property
    def dims(self) -> tuple[int, int]:
        return (self.height, self.width)


@dataclass(frozen=True)
class ProbMap:
    """Per-pixel per-label probabilities, float32 (height, width, len(labels)).

    Construction renormalizes each pixel to sum exactly to 1 (within 1e-6).
    Inputs whose pixel sums stray more than 1e-3 from 1 are rejected: that is
    corrupt data, not blur jitter.  Pixels already summing to 1 within 1e-6
    are kept bit-identical so rewrapping valid maps is lossless.
    """

    data: np.ndarray
    labels: LabelSet

    def __post_init__(self) -> None:
        arr = np.asarray(self.data)
        if arr.ndim != 3 or arr.shape[2] != len(self.labels):
            raise ContractError(
                f"probability map must be (H, W, {len(self.labels)}), got {arr.shape}"
            )
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ContractError("probability map dimensions must be at least 1x1")
        if not np.isfinite(arr).all():
            raise ContractError("probability map contains non-finite values")
        arr = arr.astype(np.float32, copy=True)
        if arr.min() < -PROBMAP_SUM_TOLERANCE or arr.max() > 1.0 + PROBMAP_PRE_TOLERANCE:
            raise ContractError(
                f"probability values outside [0, 1]: range "
                f"[{float(arr.min()):.6g}, {float(arr.max()):.6g}]"
            )
        sums = arr.sum(axis=2, dtype=np.float64)
        off = np.abs(sums - 1.0)
        if off.max() > PROBMAP_PRE_TOLERANCE:
            y, x = np.unravel_index(int(off.argmax()), off.shape)
            raise ContractError(
                f"pixel ({x}, {y}) channel sum {sums[y, x]:.6f} is outside "
                f"[1-{PROBMAP_PRE_TOLERANCE}, 1+{PROBMAP_PRE_TOLERANCE}]"
            )
        needs = off > PROBMAP_SUM_TOLERANCE
        if needs.any():
            arr[needs] = (arr[needs].astype(np.float64) / sums[needs][:, None]).astype(
                np.float32
            )
        np.clip(arr, 0.0, 1.0, out=arr)
        object.__setattr__(self, "data", _freeze(arr))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def dims(self) -> tuple[int, int]:
        return (self.height, self.width)

    def channel(self, c: int) -> np.ndarray:
        return self.data[:, :, c]


@dataclass(frozen=True)
class RegionMask:
    """A binary-mask region: tight bounding box, mask, channel, and provenance."""

    bbox: BBox
    mask: np.ndarray
    channel: int
    source: str = "pred"
    # kept for dedup and ranking tie-breaks without recounting
    area: int = field(init=False)

    def __post_init__(self) -> None:
        mask = np.asarray(self.mask)
        if mask.dtype != np.bool_:
            mask = mask.astype(bool)
        if mask.shape != (self.bbox.height, self.bbox.width):
            raise ContractError(
                f"mask shape {mask.shape} does not match box "
                f"{self.bbox.height}x{self.bbox.width}"
            )
        if not mask.any():
            raise ContractError("region mask is empty")
        ys, xs = np.nonzero(mask)
        if (
            ys.min() != 0
            or xs.min() != 0
            or ys.max() != mask.shape[0] - 1
            or xs.max() != mask.shape[1] - 1
        ):
            raise ContractError("bbox is not the tight bounding box of the mask")
        if self.source not in REGION_SOURCES:
            raise ContractError(f"unknown region source {self.source!r}")
        mask = np.ascontiguousarray(mask)
        object.__setattr__(self, "mask", _freeze(mask))
        object.__setattr__(self, "area", int(mask.sum()))


def region_from_mask(
    full_mask: np.ndarray, channel: int, source: str
) -> RegionMask | None:
    """Tight-crop a full-frame boolean mask into a RegionMask; None if empty."""
    ys, xs = np.nonzero(full_mask)
    if ys.size == 0:
        return None
    y0, y1 = int(ys.min()), int(ys.max()) + 1
    x0, x1 = int(xs.min()), int(xs.max()) + 1
    return RegionMask(
        bbox=BBox(x0, y0, x1, y1),
        mask=full_mask[y0:y1, x0:x1].copy(),
        channel=channel,
        source=source,
    )


def _bilinear(src: np.ndarray, dst_h: int, dst_w: int) -> np.ndarray:
    """Bilinear resample (H, W, C) float64 with half-pixel centers, edge clamp.

    Destination pixel centers map to source coordinates via
    s = (d + 0.5) * src/dst - 0.5, clamped to the valid range, which makes a
    same-size resize the exact identity.
    """
    src_h, src_w = src.shape[:2]
    sy = np.clip((np.arange(dst_h) + 0.5) * (src_h / dst_h) - 0.5, 0.0, src_h - 1.0)
    sx = np.clip((np.arange(dst_w) + 0.5) * (src_w / dst_w) - 0.5, 0.0, src_w - 1.0)
    y0 = np.floor(sy).astype(np.intp)
    x0 = np.floor(sx).astype(np.intp)
    y1 = np.minimum(y0 + 1, src_h - 1)
    x1 = np.minimum(x0 + 1, src_w - 1)
    fy = (sy - y0)[:, None, None]
    fx = (sx - x0)[None, :, None]
    tl = src[np.ix_(y0, x0)]
    tr = src[np.ix_(y0, x1)]
    bl = src[np.ix_(y1, x0)]
    br = src[np.ix_(y1, x1)]
    top = tl * (1.0 - fx) + tr * fx
    bot = bl * (1.0 - fx) + br * fx
    return top * (1.0 - fy) + bot * fy


def resize_labelmap_nearest(labelmap: np.ndarray, dst_h: int, dst_w: int) -> np.ndarray:
    """Nearest-neighbour resize for integer label maps (same center convention)."""
    src_h, src_w = labelmap.shape
    sy = np.clip(
        np.floor((np.arange(dst_h) + 0.5) * (src_h / dst_h)).astype(np.intp),
        0,
        src_h - 1,
    )
    sx = np.clip(
        np.floor((np.arange(dst_w) + 0.5) * (src_w / dst_w)).astype(np.intp),
        0,
        src_w - 1,
    )
    return labelmap[np.ix_(sy, sx)]


def crop_resize(img, src: BBox, dims: tuple[int, int]):
    """Crop `src` out of an ImageU8 or ProbMap and resize to (height, width).

    Bilinear with edge clamping; probability maps are renormalized per pixel
    after interpolation (interpolation already preserves the channel sum, so
    this only absorbs float rounding).
    """
    dst_h, dst_w = dims
    if dst_h < 1 or dst_w < 1:
        raise ContractError(f"destination dims must be positive, got {dims}")
    clipped = src.clipped(img.dims)
    if clipped is None:
        raise ContractError(f"crop box {src.as_tuple()} lies outside the image")
    window = img.data[clipped.y0 : clipped.y1, clipped.x0 : clipped.x1]
    out = _bilinear(window.astype(np.float64), dst_h, dst_w)
    if isinstance(img, ImageU8):
        return ImageU8(np.clip(np.floor(out + 0.5), 0, 255).astype(np.uint8))
    if isinstance(img, ProbMap):
        return ProbMap(out.astype(np.float32), img.labels)
    raise ContractError(f"crop_resize expects ImageU8 or ProbMap, got {type(img)!r}")
