"""2D polyline helpers: arclength resampling, rasterization, smooth jitter.

Rasterization draws 1-pixel-wide Bresenham strokes into a binary uint8
image and is fully deterministic.
"""

import numpy as np

from .mesh import CANVAS_SIZE


def polyline_length(points, closed=False):
    points = np.asarray(points, dtype=np.float64)
    seg = np.diff(points, axis=0)
    total = float(np.sqrt((seg ** 2).sum(axis=1)).sum())
    if closed and len(points) > 1:
        total += float(np.linalg.norm(points[0] - points[-1]))
    return total


def resample_polyline(points, count, closed=False):
    """`count` points spaced uniformly by arclength along the polyline.

    Open curves keep both endpoints exactly; closed curves treat the input
    as a loop starting at the first point.
    """
    points = np.asarray(points, dtype=np.float64)
    if count < 2:
        raise ValueError("need at least 2 sample points")
    if len(points) == 1:
        return np.repeat(points, count, axis=0)
    if closed:
        points = np.vstack([points, points[:1]])
    seg = np.sqrt((np.diff(points, axis=0) ** 2).sum(axis=1))
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    total = cum[-1]
    if total == 0:
        return np.repeat(points[:1], count, axis=0)
    if closed:
        s = np.linspace(0.0, total, count, endpoint=False)
    else:
        s = np.linspace(0.0, total, count)
    x = np.interp(s, cum, points[:, 0])
    y = np.interp(s, cum, points[:, 1])
    return np.stack([x, y], axis=1)


def arclength_fractions(points, closed=False):
    """Cumulative arclength of each point as a fraction of the total."""
    points = np.asarray(points, dtype=np.float64)
    seg = np.sqrt((np.diff(points, axis=0) ** 2).sum(axis=1))
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    total = cum[-1]
    if closed and len(points) > 1:
        total += float(np.linalg.norm(points[0] - points[-1]))
    if total == 0:
        return np.zeros(len(points))
    return cum / total


def points_at_fractions(points, fractions, closed=False):
    """Sample the polyline at the given arclength fractions in [0, 1]."""
    points = np.asarray(points, dtype=np.float64)
    if closed:
        points = np.vstack([points, points[:1]])
    seg = np.sqrt((np.diff(points, axis=0) ** 2).sum(axis=1))
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    s = np.asarray(fractions, dtype=np.float64) * cum[-1]
    x = np.interp(s, cum, points[:, 0])
    y = np.interp(s, cum, points[:, 1])
    return np.stack([x, y], axis=1)


def _draw_segment(img, p0, p1):
    x0, y0 = int(round(p0[0])), int(round(p0[1]))
    x1, y1 = int(round(p1[0])), int(round(p1[1]))
    dx = abs(x1 - x0)
    dy = -abs(y1 - y0)
    sx = 1 if x0 < x1 else -1
    sy = 1 if y0 < y1 else -1
    err = dx + dy
    h, w = img.shape
    while True:
        if 0 <= y0 < h and 0 <= x0 < w:
            img[y0, x0] = 1
        if x0 == x1 and y0 == y1:
            break
        e2 = 2 * err
        if e2 >= dy:
            err += dy
            x0 += sx
        if e2 <= dx:
            err += dx
            y0 += sy


def rasterize_polylines(polylines, size=CANVAS_SIZE, closed_names=()):
    """Binary (size, size) uint8 raster of 1-px strokes.

    `polylines` is an iterable of (name, (k, 2) pixel array).  Curves whose
    name is in `closed_names` are closed back to their first point.
    """
    img = np.zeros((size, size), dtype=np.uint8)
    for name, pts in polylines:
        pts = np.asarray(pts, dtype=np.float64)
        if len(pts) == 0:
            continue
        if len(pts) == 1:
            _draw_segment(img, pts[0], pts[0])
            continue
        for a, b in zip(pts[:-1], pts[1:]):
            _draw_segment(img, a, b)
        if name in closed_names:
            _draw_segment(img, pts[-1], pts[0])
    return img


def smooth_offsets(rng, count, magnitude, waves=3):
    """Smooth per-point 2D offsets bounded by `magnitude` (low-frequency sum)."""
    if count < 2 or magnitude <= 0:
        return np.zeros((count, 2))
    t = np.linspace(0.0, 1.0, count)
    out = np.zeros((count, 2))
    for axis in range(2):
        acc = np.zeros(count)
        for k in range(1, waves + 1):
            amp = rng.uniform(-1.0, 1.0) / k
            phase = rng.uniform(0, 2 * np.pi)
            acc += amp * np.sin(2 * np.pi * k * t + phase)
        peak = np.abs(acc).max()
        if peak > 0:
            acc *= rng.uniform(0.3, 1.0) * magnitude / peak
        out[:, axis] = acc
    return out
