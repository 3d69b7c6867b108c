"""Grid-pooled contextual features around candidate regions.

A candidate is described by what the probability map says around it at two
ranges: a short-range box (the candidate box scaled 3x) and a long-range box
(a third of the image, centered on the candidate).  Each box is pooled on a
5x5 grid of per-channel means, and the two grids are concatenated.
"""

from __future__ import annotations

import numpy as np

from .core import BBox, ContractError, ProbMap, RegionMask, round_half_up, scale_bbox

GRID = 5
SHORT_RANGE_SCALE = 3.0
LONG_RANGE_FRACTION = 1.0 / 3.0


def context_length(n_labels: int) -> int:
    return 2 * GRID * GRID * n_labels


def grid_pool(pmap: ProbMap, box: BBox, grid: int = GRID) -> np.ndarray:
    """Per-cell per-channel means of the map over a grid x grid split of box.

    The box may extend beyond the image: each cell averages only its pixels
    inside the image, and cells with no valid pixels (outside the image, or
    zero-width after rounding) are zero — "near the border" is encoded as
    missing context rather than clamped context.
    """
    if grid < 1:
        raise ContractError(f"grid must be >= 1, got {grid}")
    h, w, n = pmap.data.shape
    out = np.zeros((grid, grid, n), dtype=np.float64)
    xs = [box.x0 + round_half_up(j * box.width / grid) for j in range(grid + 1)]
    ys = [box.y0 + round_half_up(i * box.height / grid) for i in range(grid + 1)]
    for gy in range(grid):
        y0, y1 = max(ys[gy], 0), min(ys[gy + 1], h)
        if y0 >= y1:
            continue
        for gx in range(grid):
            x0, x1 = max(xs[gx], 0), min(xs[gx + 1], w)
            if x0 >= x1:
                continue
            cell = pmap.data[y0:y1, x0:x1]
            out[gy, gx] = cell.mean(axis=(0, 1), dtype=np.float64)
    return out


def short_context(pmap: ProbMap, region: RegionMask) -> np.ndarray:
    """Pool over the candidate box scaled 3x about its center (unclipped)."""
    return grid_pool(pmap, scale_bbox(region.bbox, SHORT_RANGE_SCALE, bounds=None))


def long_context(pmap: ProbMap, region: RegionMask) -> np.ndarray:
    """Pool over a box one third of the image size, centered on the candidate."""
    bw = max(1, round_half_up(pmap.width * LONG_RANGE_FRACTION))
    bh = max(1, round_half_up(pmap.height * LONG_RANGE_FRACTION))
    cx, cy = region.bbox.center
    x0 = round_half_up(cx - bw / 2.0)
    y0 = round_half_up(cy - bh / 2.0)
    return grid_pool(pmap, BBox(x0, y0, x0 + bw, y0 + bh))


def context_feature(pmap: ProbMap, region: RegionMask) -> np.ndarray:
    """Short-range then long-range grids, flattened cell-major, channel innermost."""
    return np.concatenate(
        [short_context(pmap, region).ravel(), long_context(pmap, region).ravel()]
    )
