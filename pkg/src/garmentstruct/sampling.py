"""Arc-length resampling of polylines and density-adaptive patch subsampling."""

from __future__ import annotations

import math

import numpy as np

from .model import Curve3D, Patch3D


def resample_polyline(points: np.ndarray, n: int) -> tuple[np.ndarray, bool]:
    """Resample to ``n`` points evenly spaced in arc length.

    Returns ``(points, degenerate)``; a zero-length input (possibly after
    underflow) yields copies of its first point, with the last point kept,
    and ``degenerate=True``. Endpoints are copied, not
    interpolated, so they are preserved bit for bit.
    """
    if n < 2:
        raise ValueError(f"need at least 2 samples, got {n}")
    pts = np.asarray(points, dtype=float)
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    total = cum[-1]
    if total <= 0:
        out = np.repeat(pts[:1], n, axis=0)
        out[-1] = pts[-1]
        return out, True
    targets = np.linspace(0.0, total, n)
    # segment k covers [cum[k], cum[k+1]]; zero-length segments are skipped by searchsorted
    k = np.clip(np.searchsorted(cum, targets, side="right") - 1, 0, len(seg) - 1)
    with np.errstate(invalid="ignore", divide="ignore"):
        t = np.where(seg[k] > 0, (targets - cum[k]) / seg[k], 0.0)
    out = pts[k] + t[:, None] * (pts[k + 1] - pts[k])
    out[0] = pts[0]
    out[-1] = pts[-1]
    return out, False


def resample_curve(c: Curve3D, n: int) -> Curve3D:
    pts, _ = resample_polyline(c.points, n)
    return Curve3D(c.id, pts, c.validity_prob)


def mean_neighbor_spacing(grid: np.ndarray) -> float:
    g = np.asarray(grid, dtype=float)
    du = np.linalg.norm(np.diff(g, axis=0), axis=-1)
    dv = np.linalg.norm(np.diff(g, axis=1), axis=-1)
    return float(np.concatenate([du.ravel(), dv.ravel()]).mean())


def adaptive_stride(grid: np.ndarray, target_spacing: float) -> int:
    if target_spacing <= 0:
        raise ValueError("target_spacing must be positive")
    h = mean_neighbor_spacing(grid)
    if h <= 0:
        return 1
    return max(1, int(math.floor(target_spacing / h + 0.5)))


def adaptive_indices(grid_size: int, stride: int) -> list[tuple[int, int]]:
    """Row-major (row, col) indices kept by stride ``stride`` plus the four corners."""
    keep = set()
    rows = range(0, grid_size, stride)
    for r in rows:
        for c in rows:
            keep.add((r, c))
    last = grid_size - 1
    keep.update({(0, 0), (0, last), (last, 0), (last, last)})
    return sorted(keep)


def sample_patch_adaptive(p: Patch3D, target_spacing: float) -> np.ndarray:
    """Keep every k-th grid row/column, k = round(target_spacing / mean spacing).

    The four corners are always kept so even a tiny patch contributes its extent.
    """
    k = adaptive_stride(p.grid, target_spacing)
    idx = adaptive_indices(p.grid_size, k)
    rows, cols = zip(*idx)
    return p.grid[list(rows), list(cols)]
