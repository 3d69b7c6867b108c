"""Render annotation JSON into degraded probability maps.

The consuming pipeline documents its simulated-segmentation output precisely
enough to reproduce off line: paint labels in a fixed order, one-hot encode,
box blur, average stride x stride blocks, add seeded Gaussian noise, clamp,
renormalize.  Noise streams come from a sha256-derived generator keyed by
(seed, "segnoise", "oracle:s<stride>:b<blur>:n<sigma>", image id, window
tag), so a map rendered here is byte for byte the one the pipeline would
have produced itself.
"""

import hashlib
from pathlib import Path

import numpy as np
from scipy.ndimage import uniform_filter

from .formats import (
    SUM_TOLERANCE,
    Annotation,
    ExportError,
    check_labels,
    fpm_bytes,
    load_annotation,
    parse_annotation,
    _atomic_write,
)

# Pixel sums further than this from one mean corrupt data, not rounding drift.
PRE_TOLERANCE = 1e-3


def derive_generator(seed: int, *tags: str) -> np.random.Generator:
    """128-bit sub-seed from sha256(seed|tag|tag|...), little endian."""
    digest = hashlib.sha256("|".join([str(seed), *tags]).encode("utf-8")).digest()
    return np.random.default_rng(int.from_bytes(digest[:16], "little"))


def _clip_box(box, dims) -> tuple[int, int, int, int] | None:
    h, w = dims
    x0, y0 = max(box[0], 0), max(box[1], 0)
    x1, y1 = min(box[2], w), min(box[3], h)
    if x0 >= x1 or y0 >= y1:
        return None
    return (x0, y0, x1, y1)


def paint_labelmap(
    annotation: Annotation, dims: tuple[int, int], labels
) -> np.ndarray:
    """Per-pixel label indices; later layers overpaint earlier ones.

    bg < face < hands < objects, matching how the pipeline rasterizes its
    own ground truth.  Object masks are cropped to the in-image part of
    their box.
    """
    names = check_labels(labels)
    h, w = int(dims[0]), int(dims[1])
    if h < 1 or w < 1:
        raise ExportError(f"map dimensions must be positive, got {(h, w)}")
    out = np.zeros((h, w), dtype=np.intp)
    face_idx = names.index("face")
    hand_idx = names.index("hand")
    if annotation.face is not None:
        fb = _clip_box(annotation.face, dims)
        if fb is not None:
            out[fb[1] : fb[3], fb[0] : fb[2]] = face_idx
    for hb in annotation.hands:
        cb = _clip_box(hb, dims)
        if cb is not None:
            out[cb[1] : cb[3], cb[0] : cb[2]] = hand_idx
    for obj in annotation.objects:
        if obj.label not in names:
            raise ExportError(
                f"annotation object label {obj.label!r} is not in the label set"
            )
        channel = names.index(obj.label)
        ob = _clip_box(obj.box, dims)
        if ob is None:
            continue
        sub = obj.mask[
            ob[1] - obj.box[1] : ob[3] - obj.box[1],
            ob[0] - obj.box[0] : ob[2] - obj.box[0],
        ]
        view = out[ob[1] : ob[3], ob[0] : ob[2]]
        view[sub] = channel
    return out


def _block_mean(arr: np.ndarray, stride: int) -> np.ndarray:
    # Each stride x stride block (smaller at the bottom/right edges) becomes
    # its mean, then blocks are repeated back to full resolution.
    h, w = arr.shape[:2]
    yb = np.arange(0, h, stride)
    xb = np.arange(0, w, stride)
    sums = np.add.reduceat(np.add.reduceat(arr, yb, axis=0), xb, axis=1)
    ylen = np.diff(np.append(yb, h))
    xlen = np.diff(np.append(xb, w))
    means = sums / (ylen[:, None, None] * xlen[None, :, None])
    return np.repeat(np.repeat(means, ylen, axis=0), xlen, axis=1)


def _storage_normalize(arr32: np.ndarray) -> np.ndarray:
    """The reader's storage rule, applied at write time.

    Pixels summing to one within 1e-6 keep their bits; the rest get one
    float64 renormalize.  Values are then clamped to [0, 1].
    """
    if not np.isfinite(arr32).all():
        raise ExportError("rendered map contains non-finite values")
    if arr32.min() < -SUM_TOLERANCE or arr32.max() > 1.0 + PRE_TOLERANCE:
        raise ExportError(
            f"rendered values outside [0, 1]: range "
            f"[{float(arr32.min()):.6g}, {float(arr32.max()):.6g}]"
        )
    sums = arr32.sum(axis=2, dtype=np.float64)
    off = np.abs(sums - 1.0)
    if off.max() > PRE_TOLERANCE:
        y, x = np.unravel_index(int(off.argmax()), off.shape)
        raise ExportError(
            f"pixel ({x}, {y}) channel sum {sums[y, x]:.6f} is outside "
            f"[1-{PRE_TOLERANCE}, 1+{PRE_TOLERANCE}]"
        )
    needs = off > SUM_TOLERANCE
    if needs.any():
        arr32[needs] = (
            arr32[needs].astype(np.float64) / sums[needs][:, None]
        ).astype(np.float32)
    np.clip(arr32, 0.0, 1.0, out=arr32)
    return arr32


def render_probability(
    annotation: Annotation,
    dims: tuple[int, int],
    labels,
    blur: int = 0,
    sigma: float = 0.0,
    stride: int = 1,
    seed: int = 0,
    window: str = "full",
) -> np.ndarray:
    """Float32 (H, W, L) map for one annotation, degraded per the knobs.

    blur, sigma and stride default to the clean one-hot rendering.  window
    is the tag the noise stream is keyed on; the full-image map uses "full".
    """
    names = check_labels(labels)
    blur, stride, sigma = int(blur), int(stride), float(sigma)
    if blur < 0:
        raise ExportError(f"blur radius must be >= 0, got {blur}")
    if stride < 1:
        raise ExportError(f"stride must be >= 1, got {stride}")
    if sigma < 0:
        raise ExportError(f"noise sigma must be >= 0, got {sigma}")
    labelmap = paint_labelmap(annotation, dims, names)
    n = len(names)
    arr = np.zeros((dims[0], dims[1], n), dtype=np.float64)
    np.put_along_axis(arr, labelmap[:, :, None], 1.0, axis=2)
    if blur > 0:
        k = 2 * blur + 1
        arr = uniform_filter(arr, size=(k, k, 1), mode="nearest")
    if stride > 1:
        arr = _block_mean(arr, stride)
    if sigma > 0:
        tag = f"oracle:s{stride}:b{blur}:n{sigma!r}"
        rng = derive_generator(seed, "segnoise", tag, annotation.image_id, window)
        arr = arr + rng.normal(0.0, sigma, size=arr.shape)
        np.clip(arr, 0.0, 1.0, out=arr)
        sums = arr.sum(axis=2)
        dead = sums <= 0.0  # every channel clamped away: fall back to uniform
        if dead.any():
            arr[dead] = 1.0 / n
            sums[dead] = 1.0
        arr = arr / sums[:, :, None]
    return _storage_normalize(arr.astype(np.float32))


def annotation_to_fpm(
    annotation,
    dims: tuple[int, int],
    labels,
    path: str | Path,
    blur: int = 0,
    sigma: float = 0.0,
    stride: int = 1,
    seed: int = 0,
) -> np.ndarray:
    """Render one annotation (object, dict, or JSON path) and write the map."""
    if isinstance(annotation, (str, Path)):
        annotation = load_annotation(annotation)
    elif isinstance(annotation, dict):
        annotation = parse_annotation(annotation)
    values = render_probability(
        annotation, dims, labels, blur=blur, sigma=sigma, stride=stride, seed=seed
    )
    _atomic_write(path, fpm_bytes(values, labels))
    return values
