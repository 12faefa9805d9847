"""Ear-clipping triangulation of closed panel boundaries."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import Panel, shoelace_area


class OpenBoundaryError(ValueError):
    def __init__(self, gap: float, joint: int):
        super().__init__(f"panel boundary is open: largest joint gap {gap:.3g} at joint {joint}")
        self.gap = gap
        self.joint = joint


class SelfIntersectionError(ValueError):
    def __init__(self, seg_a: int, seg_b: int):
        super().__init__(f"panel boundary self-intersects: segments {seg_a} and {seg_b}")
        self.pair = (seg_a, seg_b)


@dataclass(frozen=True, eq=False)
class Triangulation:
    vertices: np.ndarray  # (n, 2) boundary polygon, counter-clockwise
    triangles: np.ndarray  # (m, 3) indices into vertices

    def areas(self) -> np.ndarray:
        a, b, c = (self.vertices[self.triangles[:, k]] for k in range(3))
        return 0.5 * ((b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0]))

    @property
    def area(self) -> float:
        return float(self.areas().sum())


def closure_gaps(edges) -> np.ndarray:
    """Distance from each edge's end to the next edge's start (cyclic)."""
    if not edges:
        return np.zeros(0)
    ends = np.array([e.points[-1] for e in edges])
    starts = np.array([e.points[0] for e in edges])
    return np.linalg.norm(ends - np.roll(starts, -1, axis=0), axis=1)


def boundary_polygon(edges, closure_tol: float = 1e-6) -> np.ndarray:
    """Closed polygon from an ordered edge loop (each edge's last point dropped)."""
    gaps = closure_gaps(edges)
    if len(gaps) == 0:
        raise OpenBoundaryError(float("inf"), -1)
    worst = int(np.argmax(gaps))
    if gaps[worst] > closure_tol:
        raise OpenBoundaryError(float(gaps[worst]), worst)
    return np.concatenate([e.points[:-1] for e in edges])


def _dedupe(poly: np.ndarray, eps: float) -> np.ndarray:
    keep = np.linalg.norm(poly - np.roll(poly, -1, axis=0), axis=1) > eps
    return poly[keep]


def _segments_intersect(p: np.ndarray):
    """First pair of non-adjacent polygon segments that touch or cross, or None."""
    n = len(p)
    a, b = p, np.roll(p, -1, axis=0)
    lo, hi = np.minimum(a, b), np.maximum(a, b)
    # candidate pairs i < j by bounding-box overlap; neighbours share a vertex and are skipped
    box = np.all(lo[None, :] <= hi[:, None], axis=-1) & np.all(hi[None, :] >= lo[:, None], axis=-1)
    box = np.triu(box, 2)
    box[0, n - 1] = False
    i, j = np.nonzero(box)
    if len(i) == 0:
        return None

    def orient(o, q, r):
        return (q[:, 0] - o[:, 0]) * (r[:, 1] - o[:, 1]) - (q[:, 1] - o[:, 1]) * (r[:, 0] - o[:, 0])

    ai, bi, aj, bj = a[i], b[i], a[j], b[j]
    o1, o2 = orient(ai, bi, aj), orient(ai, bi, bj)
    o3, o4 = orient(aj, bj, ai), orient(aj, bj, bi)
    tol = 1e-12 * np.maximum(np.linalg.norm(bi - ai, axis=1) * np.linalg.norm(bj - aj, axis=1), 1e-300)
    cross = (((o1 > tol) & (o2 < -tol)) | ((o1 < -tol) & (o2 > tol))) & (
        ((o3 > tol) & (o4 < -tol)) | ((o3 < -tol) & (o4 > tol))
    )

    # touching: an endpoint of one segment lies on the other
    def on(o, q, s0, s1):
        inside = np.all(q >= np.minimum(s0, s1) - 1e-15, axis=1) & np.all(q <= np.maximum(s0, s1) + 1e-15, axis=1)
        return (np.abs(o) <= tol) & inside

    touch = on(o1, aj, ai, bi) | on(o2, bj, ai, bi) | on(o3, ai, aj, bj) | on(o4, bi, aj, bj)
    hit = np.flatnonzero(cross | touch)
    if len(hit) == 0:
        return None
    return int(i[hit[0]]), int(j[hit[0]])


def _remove_collinear(poly: np.ndarray, rel_tol: float = 1e-10):
    """Indices of polygon vertices that are not (numerically) collinear with neighbours."""
    idx = list(range(len(poly)))
    changed = True
    while changed and len(idx) > 3:
        changed = False
        pts = poly[idx]
        prev, nxt = np.roll(pts, 1, axis=0), np.roll(pts, -1, axis=0)
        u, v = pts - prev, nxt - pts
        cross = u[:, 0] * v[:, 1] - u[:, 1] * v[:, 0]
        dot = (u * v).sum(axis=1)
        scale = np.linalg.norm(u, axis=1) * np.linalg.norm(v, axis=1)
        flat = (np.abs(cross) <= rel_tol * scale) & (dot > 0)
        if flat.any():
            # drop every other flagged vertex so a run of collinear points shrinks safely
            drop, skip = set(), False
            for k in np.flatnonzero(flat):
                if skip and k - 1 in drop:
                    continue
                drop.add(int(k))
                skip = True
            idx = [i for k, i in enumerate(idx) if k not in drop]
            changed = True
    return idx


def ear_clip(poly: np.ndarray) -> np.ndarray:
    """Triangulate a simple counter-clockwise polygon; returns (n-2, 3) vertex indices.

    Vertices sit in a circular linked list. A convex vertex is an ear when no
    reflex vertex lies inside (or on) its triangle; after a clip only the two
    neighbours can change status, and a reflex vertex can only turn convex.
    """
    poly = np.asarray(poly, dtype=float)
    n = len(poly)
    xs, ys = poly[:, 0].tolist(), poly[:, 1].tolist()
    scale = float(np.abs(poly).max()) or 1.0
    eps = 1e-14 * scale * scale
    prv = [(i - 1) % n for i in range(n)]
    nxt = [(i + 1) % n for i in range(n)]

    def cross(i):
        a, c = prv[i], nxt[i]
        return (xs[i] - xs[a]) * (ys[c] - ys[i]) - (ys[i] - ys[a]) * (xs[c] - xs[i])

    reflex = np.array([cross(i) <= eps for i in range(n)])
    alive = np.ones(n, dtype=bool)

    def is_ear(i):
        if cross(i) <= eps:
            return False
        a, c = prv[i], nxt[i]
        cand = np.flatnonzero(reflex & alive)
        cand = cand[(cand != a) & (cand != i) & (cand != c)]
        if len(cand) == 0:
            return True
        px, py = poly[cand, 0], poly[cand, 1]
        inside = np.ones(len(cand), dtype=bool)
        for u, v in ((a, i), (i, c), (c, a)):
            inside &= (xs[v] - xs[u]) * (py - ys[u]) - (ys[v] - ys[u]) * (px - xs[u]) >= -eps
        # a reflex vertex sitting exactly on a triangle corner does not block the ear
        on_corner = np.zeros(len(cand), dtype=bool)
        for u in (a, i, c):
            on_corner |= (px == xs[u]) & (py == ys[u])
        return not np.any(inside & ~on_corner)

    tris = []
    remaining = n
    i = 0
    misses = 0
    while remaining > 3:
        if is_ear(i):
            a, c = prv[i], nxt[i]
            tris.append((a, i, c))
            nxt[a], prv[c] = c, a
            alive[i] = False
            remaining -= 1
            for v in (a, c):
                if reflex[v] and cross(v) > eps:
                    reflex[v] = False
            i = c
            misses = 0
            continue
        i = nxt[i]
        misses += 1
        if misses > remaining:
            # no ear in a full pass: drop a degenerate (collinear) vertex if there is one
            live = np.flatnonzero(alive)
            k = int(live[np.argmin([abs(cross(v)) for v in live])])
            if abs(cross(k)) > eps:
                raise ValueError("ear clipping failed: polygon is not simple")
            a, c = prv[k], nxt[k]
            nxt[a], prv[c] = c, a
            alive[k] = False
            remaining -= 1
            for v in (a, c):
                reflex[v] = cross(v) <= eps
            i, misses = c, 0
    if remaining == 3:
        i = int(np.flatnonzero(alive)[0])
        if cross(i) > 0:
            tris.append((prv[i], i, nxt[i]))
    return np.array(tris, dtype=int).reshape(-1, 3)


def triangulate_panel(p: Panel, closure_tol: float = 1e-6) -> Triangulation:
    """Triangulate the interior bounded by the panel's ordered edge loop.

    The returned vertex list holds every boundary sample (counter-clockwise);
    vertices lying on straight runs are kept but not used as triangle corners.
    """
    poly = boundary_polygon(p.edges, closure_tol)
    poly = _dedupe(poly, 1e-15)
    if len(poly) < 3:
        raise ValueError(f"panel {p.patch_id} boundary has fewer than 3 distinct vertices")
    if shoelace_area(poly) < 0:
        poly = poly[::-1].copy()
    hit = _segments_intersect(poly)
    if hit is not None:
        raise SelfIntersectionError(*hit)
    corners = _remove_collinear(poly)
    tris = ear_clip(poly[corners])
    tris = np.asarray(corners)[tris] if len(tris) else tris
    return Triangulation(poly, tris.reshape(-1, 3))
