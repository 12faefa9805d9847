"""2D geometry refinement of panel loops: bad-edge replacement and snapping of
every edge onto joint midpoints with a two-point similarity transform."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .loops import BRUTE_FORCE_LIMIT, optimal_loop_order
from .model import GarmentStructure, LoopOrder, Panel, Stage
from .topology import TopologyThresholds, refine_topology
from .triangulate import closure_gaps


class DegenerateEdgeError(ValueError):
    pass


@dataclass(frozen=True)
class GeometryParams:
    tau_gap: float = 3.0
    scale_clamp: tuple = (0.5, 2.0)
    closure_tol: float = 1e-6
    brute_force_limit: int = BRUTE_FORCE_LIMIT

    def __post_init__(self):
        lo, hi = self.scale_clamp
        object.__setattr__(self, "scale_clamp", (float(lo), float(hi)))
        if self.tau_gap <= 0:
            raise ValueError("tau_gap must be positive")
        if not (0 < lo <= hi):
            raise ValueError(f"scale_clamp must be positive and ordered, got {self.scale_clamp}")
        if self.closure_tol <= 0:
            raise ValueError("closure_tol must be positive")


@dataclass(frozen=True)
class Similarity2D:
    """p -> scale * R(angle) p + translation."""

    scale: float
    angle: float
    translation: np.ndarray
    clamped: bool = False

    @property
    def rotation(self) -> np.ndarray:
        c, s = np.cos(self.angle), np.sin(self.angle)
        return np.array([[c, -s], [s, c]])

    def apply(self, pts) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        return self.scale * pts @ self.rotation.T + self.translation


def _cplx(p) -> complex:
    return complex(float(p[0]), float(p[1]))


def fit_similarity_2pt(src_start, src_end, dst_start, dst_end, g: GeometryParams = GeometryParams(), name: str = "edge") -> Similarity2D:
    """The similarity taking ``src_start -> dst_start`` and ``src_end -> dst_end``.

    Points are treated as complex numbers, so the multiplier is
    ``(dst_end - dst_start) / (src_end - src_start)``. A scale outside
    ``g.scale_clamp`` is clamped with the rotation kept; the start constraint
    stays exact and the end point absorbs the residual.
    """
    a, b = _cplx(src_start), _cplx(src_end)
    c, d = _cplx(dst_start), _cplx(dst_end)
    if abs(b - a) <= 1e-12:
        raise DegenerateEdgeError(f"{name}: source endpoints coincide, similarity undefined")
    m = (d - c) / (b - a)
    scale = abs(m)
    angle = float(np.angle(m)) if scale > 0 else 0.0
    lo, hi = g.scale_clamp
    clamped = not (lo <= scale <= hi)
    if clamped:
        scale = min(max(scale, lo), hi)
        m = scale * complex(np.cos(angle), np.sin(angle))
    t = c - m * a
    return Similarity2D(scale, angle, np.array([t.real, t.imag]), clamped)


def _ends(loop):
    starts = np.array([e.points[0] for e in loop])
    ends = np.array([e.points[-1] for e in loop])
    return starts, ends


def detect_bad_edges(loop, g: GeometryParams = GeometryParams()) -> list:
    """Indices whose joint gaps, relative to their chord length, exceed ``tau_gap``.

    Zero-length edges are always reported.
    """
    starts, ends = _ends(loop)
    gap1 = np.linalg.norm(starts - np.roll(ends, 1, axis=0), axis=1)
    gap2 = np.linalg.norm(ends - np.roll(starts, -1, axis=0), axis=1)
    chord = np.linalg.norm(ends - starts, axis=1)
    bad = []
    for j in range(len(loop)):
        if chord[j] < 1e-12 or (gap1[j] + gap2[j]) / chord[j] > g.tau_gap:
            bad.append(j)
    return bad


def replace_bad_edge(loop, index: int) -> list:
    """Replace edge ``index`` by a straight run from the previous edge's end to
    the next edge's start, with the same number of samples."""
    n = len(loop)
    e = loop[index]
    a = loop[(index - 1) % n].points[-1]
    b = loop[(index + 1) % n].points[0]
    t = np.linspace(0.0, 1.0, len(e.points))[:, None]
    pts = (1 - t) * a + t * b
    pts[0], pts[-1] = a, b
    out = list(loop)
    out[index] = e.with_points(pts)
    return out


def snap_edges_to_joints(loop, g: GeometryParams = GeometryParams()) -> list:
    """Move every edge so its ends land on the midpoints of its two joints.

    All joint targets come from the input loop before any edge moves.
    """
    n = len(loop)
    starts, ends = _ends(loop)
    targets = 0.5 * (ends + np.roll(starts, -1, axis=0))  # joint j sits between edge j and j+1
    out = []
    for j, e in enumerate(loop):
        T = fit_similarity_2pt(e.points[0], e.points[-1], targets[(j - 1) % n], targets[j], g, f"edge {j} (curve {e.source_curve_id})")
        pts = T.apply(e.points)
        pts[0] = targets[(j - 1) % n]
        if not T.clamped:
            pts[-1] = targets[j]
        out.append(e.with_points(pts))
    return out


def refine_panel(panel: Panel, g: GeometryParams = GeometryParams()):
    """Order, repair and snap one panel. Returns ``(panel, info)``."""
    if not panel.edges:
        return panel, {"residual": None, "bad_edges": [], "mode": None, "closed": False}
    sol = optimal_loop_order(list(panel.edges), g.brute_force_limit)
    loop = sol.apply(list(panel.edges))
    bad = detect_bad_edges(loop, g)
    for j in bad:
        loop = replace_bad_edge(loop, j)
    try:
        loop = snap_edges_to_joints(loop, g)
        error = None
    except DegenerateEdgeError as exc:
        error = str(exc)
    residual = float(closure_gaps(loop).max())
    info = {
        "residual": residual,
        "bad_edges": [loop[j].source_curve_id for j in bad],
        "mode": sol.mode,
        "closed": residual <= g.closure_tol,
    }
    if error:
        info["error"] = error
    return Panel(panel.patch_id, loop, panel.scale, LoopOrder(sol.order, sol.flips)), info


def refine_geometry(s: GarmentStructure, g: GeometryParams = GeometryParams()) -> GarmentStructure:
    """Refine every panel; closure residuals go to ``meta['closure']``."""
    if s.stage != Stage.TOPOLOGY_REFINED:
        raise ValueError(f"refine_geometry expects a topology-refined structure, got {s.stage.value}")
    panels, closure = [], {}
    for pn in s.panels:
        new, info = refine_panel(pn, g)
        panels.append(new)
        closure[str(pn.patch_id)] = info
    meta = dict(s.meta)
    meta["closure"] = closure
    meta["open_panels"] = [int(k) for k, v in closure.items() if not v.get("closed", False)]
    return s.evolve(panels=tuple(panels), stage=Stage.GEOMETRY_REFINED, meta=meta)


def refine(s: GarmentStructure, thresholds=None, params=None, rules=None):
    """Topology then geometry refinement. Returns ``(structure, log)``."""
    topo, log = refine_topology(s, thresholds or TopologyThresholds(), rules)
    return refine_geometry(topo, params or GeometryParams()), log

