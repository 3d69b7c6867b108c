"""Coarse-to-fine refinement: re-segment subwindows around coarse-map peaks.

The coarse map's object channels are scanned for up to m well-separated local
maxima; a fixed-size square window around each peak is cropped from the image,
upscaled, and handed to the fine backend.  The per-window fine maps are mapped
back to image coordinates and averaged where windows overlap; pixels no window
covers keep their coarse values.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .backends import WindowKey
from .core import (
    BBox,
    ContractError,
    DataError,
    ImageU8,
    ProbMap,
    crop_resize,
    round_half_up,
)


@dataclass(frozen=True)
class RefineParams:
    """Subwindow selection and refinement knobs."""

    m: int = 5
    p: int = 20
    window_side_fraction: float = 1.0 / 3.0
    fine_input_side: int = 224
    min_peak_value: float = 0.01

    def __post_init__(self) -> None:
        if self.m < 1:
            raise ContractError(f"m must be >= 1, got {self.m}")
        if self.p < 1:
            raise ContractError(f"p must be >= 1, got {self.p}")
        if not (0.0 < self.window_side_fraction <= 1.0):
            raise ContractError(
                f"window side fraction must be in (0, 1], got {self.window_side_fraction}"
            )
        if self.fine_input_side < 32:
            raise ContractError(
                f"fine input side must be >= 32, got {self.fine_input_side}"
            )
        if self.min_peak_value < 0:
            raise ContractError("min peak value must be >= 0")


def local_maxima(
    grid: np.ndarray, m: int, p: int, min_value: float = 0.0
) -> list[tuple[int, int, float]]:
    """Greedy well-separated maxima of a 2-D grid, as (x, y, value) triples.

    Pixels are visited in descending value order (ties row-major, x fastest)
    and accepted iff their Euclidean distance to every previously accepted
    pixel is at least p.  Pixels with value <= min_value are never accepted.
    Selection stops after m acceptances.
    """
    if m < 1 or p < 1:
        raise ContractError(f"m and p must be >= 1, got m={m} p={p}")
    g = np.asarray(grid, dtype=np.float64)
    if g.ndim != 2 or g.size == 0:
        return []
    flat = g.ravel()
    live = np.nonzero(flat > min_value)[0]
    if live.size == 0:
        return []
    # stable sort keeps row-major order among equal values
    order = live[np.argsort(-flat[live], kind="stable")]
    w = g.shape[1]
    p2 = p * p
    accepted: list[tuple[int, int, float]] = []
    for idx in order:
        y, x = divmod(int(idx), w)
        if all((x - ax) ** 2 + (y - ay) ** 2 >= p2 for ax, ay, _ in accepted):
            accepted.append((x, y, float(flat[idx])))
            if len(accepted) == m:
                break
    return accepted


def make_subwindows(
    peaks: list[tuple[int, int, float]],
    dims: tuple[int, int],
    params: RefineParams,
) -> list[BBox]:
    """Square boxes around peaks, shifted (never shrunk) to stay inside dims.

    The side is window_side_fraction of max(H, W); an axis shorter than that
    is covered wall-to-wall.  Identical boxes from nearby peaks collapse to
    one, so "mean over covering windows" has set semantics.
    """
    h, w = dims
    side = max(1, round_half_up(params.window_side_fraction * max(h, w)))
    bh, bw = min(side, h), min(side, w)
    boxes: list[BBox] = []
    seen = set()
    for x, y, _value in peaks:
        if not (0 <= x < w and 0 <= y < h):
            raise ContractError(f"peak ({x}, {y}) outside image {dims}")
        x0 = min(max(x - bw // 2, 0), w - bw)
        y0 = min(max(y - bh // 2, 0), h - bh)
        box = BBox(x0, y0, x0 + bw, y0 + bh)
        if box.as_tuple() not in seen:
            seen.add(box.as_tuple())
            boxes.append(box)
    return boxes


def coarse_peaks(coarse: ProbMap, params: RefineParams) -> list[tuple[int, int, float]]:
    """Refinement anchors: maxima of the pixelwise max over object channels."""
    obj = list(coarse.labels.object_indices)
    peak_map = coarse.data[:, :, obj].max(axis=2)
    return local_maxima(peak_map, params.m, params.p, params.min_peak_value)


def refine(
    image: ImageU8,
    coarse: ProbMap,
    fine_backend,
    params: RefineParams,
    annotation=None,
    image_id: str = "image",
) -> ProbMap:
    """Fuse per-window fine maps over the coarse map.

    Each covered pixel becomes the arithmetic mean of all covering windows'
    values (accumulated in float64, so k identical float32 inputs come back
    bit-identical); uncovered pixels keep their coarse values.  With no peaks
    above the minimum value, the coarse map is returned unchanged.
    """
    if coarse.dims != image.dims:
        raise ContractError(
            f"coarse map dims {coarse.dims} do not match image dims {image.dims}"
        )
    windows = make_subwindows(coarse_peaks(coarse, params), image.dims, params)
    if not windows:
        return coarse
    h, w, n = coarse.data.shape
    acc = np.zeros((h, w, n), dtype=np.float64)
    cnt = np.zeros((h, w), dtype=np.int64)
    side = params.fine_input_side
    for box in windows:
        key = WindowKey(image_id, box)
        crop = crop_resize(image, box, (side, side))
        try:
            fine = fine_backend.segment(crop, annotation, key)
        except (ContractError, DataError) as e:
            raise type(e)(f"fine pass failed on window {key.tag}: {e}") from e
        if fine.dims != (box.height, box.width):
            fine = crop_resize(
                fine, BBox(0, 0, fine.width, fine.height), (box.height, box.width)
            )
        acc[box.y0 : box.y1, box.x0 : box.x1] += fine.data
        cnt[box.y0 : box.y1, box.x0 : box.x1] += 1
    covered = cnt > 0
    out = coarse.data.copy()
    out[covered] = (acc[covered] / cnt[covered, None]).astype(np.float32)
    return ProbMap(out, coarse.labels)
