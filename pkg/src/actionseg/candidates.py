"""Candidate action-object regions from a probability map.

Two region sources are combined: connected components of the pixelwise argmax
prediction, and Otsu-thresholded per-channel components filtered to those
containing a strong local maximum.  The union is deduplicated per channel by
bounding-box overlap.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .coarse2fine import local_maxima
from .core import (
    ContractError,
    LabelSet,
    ProbMap,
    RegionMask,
    bbox_iou,
    region_from_mask,
)

# 8-connectivity: thin diagonal objects must not fragment into pieces.
_STRUCTURE_8 = np.ones((3, 3), dtype=bool)


@dataclass(frozen=True)
class CandidateParams:
    l: int = 5
    min_region_area: int = 9
    dedup_iou: float = 0.9
    separation: int = 20

    def __post_init__(self) -> None:
        if self.l < 1:
            raise ContractError(f"l must be >= 1, got {self.l}")
        if self.min_region_area < 1:
            raise ContractError(
                f"min region area must be >= 1, got {self.min_region_area}"
            )
        if not (0.0 < self.dedup_iou <= 1.0):
            raise ContractError(f"dedup IoU must be in (0, 1], got {self.dedup_iou}")
        if self.separation < 1:
            raise ContractError(f"separation must be >= 1, got {self.separation}")


def pred_map(pmap: ProbMap) -> np.ndarray:
    """Pixelwise argmax over all channels; ties go to the lowest index."""
    return np.argmax(pmap.data, axis=2)


def connected_components(
    labelmap: np.ndarray, labels: LabelSet, params: CandidateParams
) -> list[RegionMask]:
    """8-connected same-label components of object-labeled pixels (source=pred).

    Components smaller than min_region_area are dropped.  Order is channel-
    then raster-ascending, so output is deterministic.
    """
    regions: list[RegionMask] = []
    for channel in labels.object_indices:
        mask = labelmap == channel
        if not mask.any():
            continue
        comp, ncomp = ndimage.label(mask, structure=_STRUCTURE_8)
        for cid in range(1, ncomp + 1):
            cmask = comp == cid
            if int(cmask.sum()) < params.min_region_area:
                continue
            region = region_from_mask(cmask, channel, "pred")
            assert region is not None
            regions.append(region)
    return regions


def _histogram_256(values: np.ndarray) -> np.ndarray:
    bins = np.minimum((values * 256.0).astype(np.int64), 255)
    bins = np.maximum(bins, 0)
    return np.bincount(bins.ravel(), minlength=256)


def otsu_threshold_hist(hist: np.ndarray) -> int | None:
    """Split bin index k maximizing between-class variance; None if degenerate.

    Background is bins 0..k, foreground k+1..255.  The variance comparison is
    done in exact integer arithmetic so ties (lowest k wins) are unambiguous:
    maximizing w0*w1*(mu0-mu1)^2 is equivalent to maximizing
    A(k)/B(k) with A = (N*s0 - S*w0)^2 and B = w0*(N-w0).
    """
    counts = [int(c) for c in hist]
    if len(counts) != 256:
        raise ContractError(f"expected a 256-bin histogram, got {len(counts)} bins")
    total = sum(counts)
    if total == 0:
        raise ContractError("empty histogram")
    weighted_total = sum(i * c for i, c in enumerate(counts))
    best_k = None
    best_a, best_b = 0, 1  # best ratio A/B as a fraction
    w0 = 0
    s0 = 0
    for k in range(255):
        w0 += counts[k]
        s0 += k * counts[k]
        b = w0 * (total - w0)
        if b == 0:
            continue
        a = (total * s0 - weighted_total * w0) ** 2
        if best_k is None or a * best_b > best_a * b:
            best_a, best_b, best_k = a, b, k
    return best_k


def otsu_threshold(values: np.ndarray) -> float:
    """Otsu threshold of a [0,1] grid; pixels strictly above it are foreground.

    Values are quantized to 256 bins; the returned threshold is the boundary
    (k+1)/256 of the best split.  A constant grid has no split: its own value
    is returned, leaving the foreground empty.
    """
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        raise ContractError("otsu threshold needs a nonempty grid")
    k = otsu_threshold_hist(_histogram_256(arr))
    if k is None:
        return float(arr.ravel()[0])
    return (k + 1) / 256.0


def maxima_regions(pmap: ProbMap, params: CandidateParams) -> list[RegionMask]:
    """Otsu-foreground components that contain a retained local maximum.

    Per object channel: the top-l maxima (separated by params.separation) are
    computed, the channel is Otsu-thresholded, and only 8-connected foreground
    components containing at least one retained maximum survive.
    """
    regions: list[RegionMask] = []
    for channel in pmap.labels.object_indices:
        grid = pmap.channel(channel)
        peaks = local_maxima(grid, params.l, params.separation)
        if not peaks:
            continue
        fg = grid > otsu_threshold(grid)
        if not fg.any():
            continue
        comp, _ = ndimage.label(fg, structure=_STRUCTURE_8)
        keep_ids = sorted({int(comp[y, x]) for x, y, _ in peaks} - {0})
        for cid in keep_ids:
            region = region_from_mask(comp == cid, channel, "maxima")
            assert region is not None
            regions.append(region)
    return regions


def candidate_union(
    r_pred: list[RegionMask],
    r_m: list[RegionMask],
    params: CandidateParams,
) -> list[RegionMask]:
    """Merge both sources, dropping near-duplicate same-channel regions.

    Regions are visited by descending mask area (ties: pred before maxima,
    then input order) and kept unless an already kept region of the same
    channel overlaps with bbox IoU >= dedup_iou — so of any conflicting pair
    the larger survives, and of an equal pair the pred one does.
    """
    pool = list(r_pred) + list(r_m)
    order = sorted(
        range(len(pool)),
        key=lambda i: (-pool[i].area, pool[i].source != "pred", i),
    )
    kept: list[RegionMask] = []
    for i in order:
        region = pool[i]
        if any(
            k.channel == region.channel and bbox_iou(k.bbox, region.bbox) >= params.dedup_iou
            for k in kept
        ):
            continue
        kept.append(region)
    return kept


def generate_candidates(pmap: ProbMap, params: CandidateParams) -> list[RegionMask]:
    """R = components of the argmax prediction, union maxima-filtered regions."""
    r_pred = connected_components(pred_map(pmap), pmap.labels, params)
    r_m = maxima_regions(pmap, params)
    return candidate_union(r_pred, r_m, params)
