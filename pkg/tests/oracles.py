"""Independent reference implementations used to pin expected test values.

Each function here recomputes a quantity the library also computes, but by a
deliberately different route: exhaustive search instead of vectorized argmax,
breadth-first flood fill instead of labeling passes, per-pixel Python loops
instead of array reductions, exact Fraction arithmetic instead of floats.
Tests compare the two; neither side is allowed to call the other.
"""

from collections import deque
from fractions import Fraction

import numpy as np


def otsu_exhaustive(values) -> float | None:
    """256-way search for the between-class-variance-maximizing threshold.

    Uses the classic w0*w1*(mu0-mu1)^2 form with exact rationals.  Returns
    (k+1)/256 for the best bin k, or None when every split leaves one side
    empty (constant input).
    """
    flat = np.asarray(values, dtype=np.float64).ravel()
    counts = [0] * 256
    for v in flat:
        b = int(v * 256)
        counts[min(max(b, 0), 255)] += 1
    total = sum(counts)
    best_k = None
    best_var = Fraction(-1)
    for k in range(256):
        w0 = sum(counts[: k + 1])
        w1 = total - w0
        if w0 == 0 or w1 == 0:
            continue
        mu0 = Fraction(sum(i * counts[i] for i in range(k + 1)), w0)
        mu1 = Fraction(sum(i * counts[i] for i in range(k + 1, 256)), w1)
        var = Fraction(w0 * w1) * (mu0 - mu1) ** 2
        if var > best_var:
            best_var = var
            best_k = k
    if best_k is None:
        return None
    return (best_k + 1) / 256.0


def flood_components(labelmap, channel: int, min_area: int = 1):
    """8-connected components of labelmap == channel, as pixel frozensets."""
    arr = np.asarray(labelmap)
    h, w = arr.shape
    seen = np.zeros((h, w), dtype=bool)
    regions = []
    for sy in range(h):
        for sx in range(w):
            if seen[sy, sx] or arr[sy, sx] != channel:
                continue
            pixels = []
            queue = deque([(sx, sy)])
            seen[sy, sx] = True
            while queue:
                x, y = queue.popleft()
                pixels.append((x, y))
                for dy in (-1, 0, 1):
                    for dx in (-1, 0, 1):
                        nx, ny = x + dx, y + dy
                        if 0 <= nx < w and 0 <= ny < h and not seen[ny, nx] \
                                and arr[ny, nx] == channel:
                            seen[ny, nx] = True
                            queue.append((nx, ny))
            if len(pixels) >= min_area:
                regions.append(frozenset(pixels))
    return regions


def greedy_maxima(grid, m: int, p: int, min_value: float = 0.0):
    """Greedy peak picking by descending value with Euclidean suppression.

    Candidates sort by (-value, y, x); a candidate survives if its squared
    distance to every kept peak is >= p*p.  Stops after m peaks.
    """
    arr = np.asarray(grid, dtype=np.float64)
    h, w = arr.shape
    cells = [
        (x, y, float(arr[y, x]))
        for y in range(h)
        for x in range(w)
        if arr[y, x] > min_value
    ]
    cells.sort(key=lambda c: (-c[2], c[1], c[0]))
    kept = []
    for x, y, v in cells:
        if len(kept) == m:
            break
        if all((x - kx) ** 2 + (y - ky) ** 2 >= p * p for kx, ky, _ in kept):
            kept.append((x, y, v))
    return kept


def cell_means(plane, box_x0, box_y0, box_x1, box_y1, grid: int = 5):
    """Per-cell pixel means of one channel plane over a grid split of the box.

    Boundaries follow the same floor(v + 0.5) split rule as the library; the
    averaging itself is a plain Python loop so the accumulation path differs.
    """
    arr = np.asarray(plane, dtype=np.float64)
    h, w = arr.shape
    bw = box_x1 - box_x0
    bh = box_y1 - box_y0
    xs = [box_x0 + int(np.floor(j * bw / grid + 0.5)) for j in range(grid + 1)]
    ys = [box_y0 + int(np.floor(i * bh / grid + 0.5)) for i in range(grid + 1)]
    out = np.zeros((grid, grid), dtype=np.float64)
    for gy in range(grid):
        for gx in range(grid):
            total = 0.0
            count = 0
            for y in range(max(ys[gy], 0), min(ys[gy + 1], h)):
                for x in range(max(xs[gx], 0), min(xs[gx + 1], w)):
                    total += float(arr[y, x])
                    count += 1
            out[gy, gx] = total / count if count else 0.0
    return out


def ap_by_ranks(scores, positives) -> float:
    """Average precision by walking the ranking one position at a time."""
    scores = list(scores)
    positives = list(positives)
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    hits = 0
    precisions = []
    for rank, i in enumerate(order, start=1):
        if positives[i]:
            hits += 1
            precisions.append(hits / rank)
    return sum(precisions) / len(precisions)


def box_intersection_over_union(a, b) -> float:
    """IoU by explicit pixel counting on a shared grid."""
    ax0, ay0, ax1, ay1 = a
    bx0, by0, bx1, by1 = b
    inter = 0
    for y in range(min(ay0, by0), max(ay1, by1)):
        for x in range(min(ax0, bx0), max(ax1, bx1)):
            in_a = ax0 <= x < ax1 and ay0 <= y < ay1
            in_b = bx0 <= x < bx1 and by0 <= y < by1
            inter += in_a and in_b
    area_a = (ax1 - ax0) * (ay1 - ay0)
    area_b = (bx1 - bx0) * (by1 - by0)
    union = area_a + area_b - inter
    return inter / union if union else 0.0


def bilinear_point(src, sy: float, sx: float) -> float:
    """Single bilinear sample with edge clamping, evaluated longhand."""
    arr = np.asarray(src, dtype=np.float64)
    h, w = arr.shape
    y0 = int(np.floor(sy))
    x0 = int(np.floor(sx))
    fy = sy - y0
    fx = sx - x0

    def at(y, x):
        return arr[min(max(y, 0), h - 1), min(max(x, 0), w - 1)]

    top = at(y0, x0) * (1 - fx) + at(y0, x0 + 1) * fx
    bot = at(y0 + 1, x0) * (1 - fx) + at(y0 + 1, x0 + 1) * fx
    return top * (1 - fy) + bot * fy


def bilinear_resize(src, dst_h: int, dst_w: int):
    """Whole-image bilinear resize via bilinear_point at half-pixel centers.

    Source coordinates clamp into [0, side - 1] before sampling; the clamp
    convention is part of the contract (a same-size resize is the identity).
    """
    arr = np.asarray(src, dtype=np.float64)
    h, w = arr.shape
    ry = h / dst_h  # precomputed ratio: the coordinate arithmetic is contract
    rx = w / dst_w
    out = np.zeros((dst_h, dst_w), dtype=np.float64)
    for dy in range(dst_h):
        for dx in range(dst_w):
            sy = min(max((dy + 0.5) * ry - 0.5, 0.0), h - 1.0)
            sx = min(max((dx + 0.5) * rx - 0.5, 0.0), w - 1.0)
            out[dy, dx] = bilinear_point(arr, sy, sx)
    return out
