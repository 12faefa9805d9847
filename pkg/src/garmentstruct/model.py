"""Core data types for the 2D-3D garment structure and their JSON form.

Elements are addressed positionally: row ``i`` of the connectivity matrix is
``patches[i]`` and column ``j`` is ``curves[j]``. Element ``id`` fields are
stable labels used by panels and edges to refer back to patches and curves.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Any, Optional, Sequence

import numpy as np


class ValidationError(ValueError):
    """A structure (or file) violates one of the type invariants."""


class Stage(str, Enum):
    RAW = "raw"
    TOPOLOGY_REFINED = "topology_refined"
    GEOMETRY_REFINED = "geometry_refined"
    GROUND_TRUTH = "ground_truth"


def _frozen_array(values, dim: Optional[int] = None, name: str = "points") -> np.ndarray:
    arr = np.array(values, dtype=float)
    if dim is not None and (arr.ndim != 2 or arr.shape[1] != dim):
        raise ValidationError(f"{name} must have shape (n, {dim}), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} contains non-finite coordinates")
    arr.setflags(write=False)
    return arr


def _check_prob(p: float, name: str) -> float:
    p = float(p)
    if not (0.0 <= p <= 1.0):
        raise ValidationError(f"{name} must lie in [0, 1], got {p}")
    return p


@dataclass(frozen=True, eq=False)
class Curve3D:
    """A 3D seam polyline."""

    id: int
    points: np.ndarray
    validity_prob: float = 1.0

    def __post_init__(self):
        pts = _frozen_array(self.points, 3, f"curve {self.id} points")
        if len(pts) < 2:
            raise ValidationError(f"curve {self.id} needs at least 2 points")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "validity_prob", _check_prob(self.validity_prob, f"curve {self.id} validity_prob"))

    @property
    def length(self) -> float:
        return polyline_length(self.points)


@dataclass(frozen=True, eq=False)
class Patch3D:
    """A 3D surface sampled on a G x G grid; ``grid`` has shape (G, G, 3)."""

    id: int
    grid: np.ndarray
    validity_prob: float = 1.0

    def __post_init__(self):
        grid = np.array(self.grid, dtype=float)
        if grid.ndim != 3 or grid.shape[0] != grid.shape[1] or grid.shape[2] != 3:
            raise ValidationError(f"patch {self.id} grid must have shape (G, G, 3), got {grid.shape}")
        if grid.shape[0] < 2:
            raise ValidationError(f"patch {self.id} grid size must be >= 2")
        if not np.all(np.isfinite(grid)):
            raise ValidationError(f"patch {self.id} grid contains non-finite coordinates")
        grid.setflags(write=False)
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "validity_prob", _check_prob(self.validity_prob, f"patch {self.id} validity_prob"))

    @property
    def grid_size(self) -> int:
        return self.grid.shape[0]

    @property
    def points(self) -> np.ndarray:
        return self.grid.reshape(-1, 3)


@dataclass(frozen=True, eq=False)
class Edge2D:
    """One flattened boundary edge of a panel, in panel-normalized coordinates.

    ``reversed`` records whether the point order runs against the source curve.
    """

    source_curve_id: int
    points: np.ndarray
    reversed: bool = False

    def __post_init__(self):
        pts = _frozen_array(self.points, 2, f"edge of curve {self.source_curve_id}")
        if len(pts) < 2:
            raise ValidationError(f"edge of curve {self.source_curve_id} needs at least 2 points")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "reversed", bool(self.reversed))

    @property
    def start(self) -> np.ndarray:
        return self.points[0]

    @property
    def end(self) -> np.ndarray:
        return self.points[-1]

    def flipped(self) -> "Edge2D":
        return Edge2D(self.source_curve_id, self.points[::-1], not self.reversed)

    def with_points(self, points) -> "Edge2D":
        return Edge2D(self.source_curve_id, points, self.reversed)


@dataclass(frozen=True)
class LoopOrder:
    """Boundary ordering chosen for a panel: ``order[k]`` indexes the edge list
    the ordering was computed on and ``flips[k]`` says whether it was reversed."""

    order: tuple
    flips: tuple

    def __post_init__(self):
        object.__setattr__(self, "order", tuple(int(i) for i in self.order))
        object.__setattr__(self, "flips", tuple(bool(f) for f in self.flips))
        if len(self.order) != len(self.flips):
            raise ValidationError("loop order needs one flip flag per edge")
        if sorted(self.order) != list(range(len(self.order))):
            raise ValidationError(f"loop order {self.order} is not a permutation")


@dataclass(frozen=True, eq=False)
class Panel:
    patch_id: int
    edges: tuple
    scale: float = 1.0
    loop_order: Optional[LoopOrder] = None

    def __post_init__(self):
        object.__setattr__(self, "edges", tuple(self.edges))
        scale = float(self.scale)
        if not (scale > 0 and math.isfinite(scale)):
            raise ValidationError(f"panel {self.patch_id} scale must be positive, got {scale}")
        object.__setattr__(self, "scale", scale)
        if self.loop_order is not None and len(self.loop_order.order) != len(self.edges):
            raise ValidationError(f"panel {self.patch_id} loop order does not cover its edges")

    @property
    def curve_ids(self) -> list:
        return [e.source_curve_id for e in self.edges]

    def boundary(self) -> np.ndarray:
        """All edge points concatenated in stored order."""
        if not self.edges:
            return np.zeros((0, 2))
        return np.concatenate([e.points for e in self.edges])


@dataclass(frozen=True, eq=False)
class GarmentStructure:
    curves: tuple
    patches: tuple
    connectivity: np.ndarray
    panels: tuple = ()
    stage: Stage = Stage.RAW
    patch_mask: Optional[np.ndarray] = None
    curve_mask: Optional[np.ndarray] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "curves", tuple(self.curves))
        object.__setattr__(self, "patches", tuple(self.patches))
        object.__setattr__(self, "panels", tuple(self.panels))
        object.__setattr__(self, "stage", Stage(self.stage))
        shape = (len(self.patches), len(self.curves))
        conn = np.array(self.connectivity, dtype=float)
        if conn.size != shape[0] * shape[1] or (conn.ndim == 2 and conn.shape != shape):
            raise ValidationError(
                f"connectivity must be {shape[0]}x{shape[1]} (patches x curves), got {conn.shape}"
            )
        conn = conn.reshape(shape)
        if not np.all(np.isfinite(conn)) or (conn.size and (conn.min() < 0 or conn.max() > 1)):
            raise ValidationError("connectivity entries must lie in [0, 1]")
        conn.setflags(write=False)
        object.__setattr__(self, "connectivity", conn)
        for name, n in (("patch_mask", len(self.patches)), ("curve_mask", len(self.curves))):
            m = getattr(self, name)
            if m is None:
                continue
            m = np.array(m, dtype=bool).reshape(-1)
            if m.shape != (n,):
                raise ValidationError(f"{name} must have length {n}")
            m.setflags(write=False)
            object.__setattr__(self, name, m)
        self._check_references()

    def _check_references(self):
        patch_ids = [p.id for p in self.patches]
        curve_ids = [c.id for c in self.curves]
        if len(set(patch_ids)) != len(patch_ids):
            raise ValidationError("patch ids must be unique")
        if len(set(curve_ids)) != len(curve_ids):
            raise ValidationError("curve ids must be unique")
        pset, cset = set(patch_ids), set(curve_ids)
        seen = set()
        for panel in self.panels:
            if panel.patch_id not in pset:
                raise ValidationError(f"panel references unknown patch {panel.patch_id}")
            if panel.patch_id in seen:
                raise ValidationError(f"more than one panel for patch {panel.patch_id}")
            seen.add(panel.patch_id)
            for e in panel.edges:
                if e.source_curve_id not in cset:
                    raise ValidationError(
                        f"edge in panel {panel.patch_id} references unknown curve {e.source_curve_id}"
                    )
        if self.stage in (Stage.TOPOLOGY_REFINED, Stage.GEOMETRY_REFINED):
            for panel in self.panels:
                row = self.connectivity[self.patch_index(panel.patch_id)]
                support = {curve_ids[j] for j in np.flatnonzero(row >= 0.5)}
                if support != set(panel.curve_ids) or len(panel.curve_ids) != len(support):
                    raise ValidationError(
                        f"panel {panel.patch_id} edges {sorted(panel.curve_ids)} differ from "
                        f"its connectivity row support {sorted(support)}"
                    )

    # -- lookups -----------------------------------------------------------
    def patch_index(self, patch_id: int) -> int:
        for i, p in enumerate(self.patches):
            if p.id == patch_id:
                return i
        raise KeyError(patch_id)

    def curve_index(self, curve_id: int) -> int:
        for j, c in enumerate(self.curves):
            if c.id == curve_id:
                return j
        raise KeyError(curve_id)

    def curve_by_id(self) -> dict:
        return {c.id: c for c in self.curves}

    def panel_by_patch(self) -> dict:
        return {p.patch_id: p for p in self.panels}

    def valid_patches(self) -> np.ndarray:
        if self.patch_mask is None:
            return np.ones(len(self.patches), dtype=bool)
        return np.asarray(self.patch_mask)

    def valid_curves(self) -> np.ndarray:
        if self.curve_mask is None:
            return np.ones(len(self.curves), dtype=bool)
        return np.asarray(self.curve_mask)

    def valid_panels(self) -> list:
        valid = {p.id for p, ok in zip(self.patches, self.valid_patches()) if ok}
        return [pn for pn in self.panels if pn.patch_id in valid]

    @property
    def n_patches(self) -> int:
        return len(self.patches)

    @property
    def n_curves(self) -> int:
        return len(self.curves)

    def evolve(self, **changes) -> "GarmentStructure":
        return replace(self, **changes)


# -- small geometric helpers shared across modules ---------------------------

def polyline_length(points: np.ndarray) -> float:
    pts = np.asarray(points, dtype=float)
    if len(pts) < 2:
        return 0.0
    return float(np.linalg.norm(np.diff(pts, axis=0), axis=1).sum())


def shoelace_area(polygon: np.ndarray) -> float:
    """Signed area; positive for counter-clockwise vertex order."""
    p = np.asarray(polygon, dtype=float)
    x, y = p[:, 0], p[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def normalize_panel_points(edges: Sequence[np.ndarray]):
    """Center the concatenated edge points on their mean and divide by the
    maximum absolute coordinate.

    Returns ``(normalized_edges, scale, offset)`` where metric = normalized * scale + offset.
    """
    allpts = np.concatenate([np.asarray(e, dtype=float) for e in edges])
    offset = allpts.mean(axis=0)
    scale = float(np.abs(allpts - offset).max())
    if scale <= 0:
        raise ValidationError("cannot normalize a panel with zero extent")
    return [(np.asarray(e, dtype=float) - offset) / scale for e in edges], scale, offset


def denormalize_panel(panel: Panel) -> list:
    """Edges with every point multiplied by the panel scale (metric units)."""
    return [e.with_points(e.points * panel.scale) for e in panel.edges]


# -- serialization -----------------------------------------------------------

def _round(v: float) -> float:
    return float(format(float(v), ".9g"))


def _rounded(arr) -> Any:
    a = np.asarray(arr, dtype=float)
    flat = [float(format(v, ".9g")) for v in a.ravel().tolist()]
    if a.ndim == 0:
        return flat[0]
    return np.array(flat).reshape(a.shape).tolist()


def _plain(obj):
    """Meta blocks may carry numpy scalars/arrays; convert to JSON-friendly values."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        if not math.isfinite(float(obj)):
            raise ValidationError("meta contains a non-finite value")
        return _round(obj)
    return obj


def to_dict(s: GarmentStructure) -> dict:
    d = {
        "stage": s.stage.value,
        "curves": [
            {"id": c.id, "points": _rounded(c.points), "validity_prob": _round(c.validity_prob)}
            for c in s.curves
        ],
        "patches": [
            {
                "id": p.id,
                "grid_size": p.grid_size,
                "points": _rounded(p.points),
                "validity_prob": _round(p.validity_prob),
            }
            for p in s.patches
        ],
        "connectivity": _rounded(s.connectivity.reshape(-1)),
        "panels": [],
    }
    for pn in s.panels:
        pd = {
            "patch_id": pn.patch_id,
            "scale": _round(pn.scale),
            "edges": [
                {"source_curve_id": e.source_curve_id, "reversed": e.reversed, "points": _rounded(e.points)}
                for e in pn.edges
            ],
        }
        if pn.loop_order is not None:
            pd["loop_order"] = {"order": list(pn.loop_order.order), "flips": list(pn.loop_order.flips)}
        d["panels"].append(pd)
    if s.patch_mask is not None or s.curve_mask is not None:
        d["masks"] = {}
        if s.patch_mask is not None:
            d["masks"]["patches"] = [int(v) for v in s.patch_mask]
        if s.curve_mask is not None:
            d["masks"]["curves"] = [int(v) for v in s.curve_mask]
    if s.meta:
        d["meta"] = _plain(s.meta)
    return d


def from_dict(d: dict) -> GarmentStructure:
    try:
        curves = [Curve3D(int(c["id"]), c["points"], c.get("validity_prob", 1.0)) for c in d["curves"]]
        patches = []
        for p in d["patches"]:
            g = int(p["grid_size"])
            pts = np.asarray(p["points"], dtype=float)
            if pts.shape != (g * g, 3):
                raise ValidationError(f"patch {p['id']} has {pts.shape} points, expected ({g * g}, 3)")
            patches.append(Patch3D(int(p["id"]), pts.reshape(g, g, 3), p.get("validity_prob", 1.0)))
        conn = np.asarray(d["connectivity"], dtype=float)
        if conn.size != len(patches) * len(curves):
            raise ValidationError(
                f"connectivity has {conn.size} entries, expected {len(patches)}x{len(curves)}"
            )
        conn = conn.reshape(len(patches), len(curves))
        panels = []
        for pd in d.get("panels", []):
            lo = pd.get("loop_order")
            panels.append(
                Panel(
                    int(pd["patch_id"]),
                    [Edge2D(int(e["source_curve_id"]), e["points"], e.get("reversed", False)) for e in pd["edges"]],
                    pd["scale"],
                    LoopOrder(lo["order"], lo["flips"]) if lo else None,
                )
            )
        masks = d.get("masks") or {}
        return GarmentStructure(
            curves,
            patches,
            conn,
            panels,
            Stage(d["stage"]),
            masks.get("patches"),
            masks.get("curves"),
            d.get("meta", {}),
        )
    except ValidationError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"malformed garment document: {exc!r}") from exc


def canonical(s: GarmentStructure) -> GarmentStructure:
    """``s`` with every float at storage precision, so save/load is exact."""
    return from_dict(to_dict(s))


def dumps(s: GarmentStructure) -> str:
    try:
        return json.dumps(to_dict(s), sort_keys=True, separators=(",", ":"), allow_nan=False) + "\n"
    except ValueError as exc:
        raise ValidationError(f"refusing to serialize: {exc}") from exc


def save(s: GarmentStructure, path) -> None:
    text = dumps(s)  # raises before anything touches the disk
    Path(path).write_text(text)


def load(path) -> GarmentStructure:
    try:
        d = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: not valid JSON ({exc})") from exc
    return from_dict(d)


def structures_close(a: GarmentStructure, b: GarmentStructure, tol: float = 1e-9) -> bool:
    """Element-wise comparison of two structures up to ``tol`` per coordinate."""
    if a.stage != b.stage or len(a.curves) != len(b.curves) or len(a.patches) != len(b.patches):
        return False
    for x, y in zip(a.curves, b.curves):
        if x.id != y.id or x.points.shape != y.points.shape or not np.allclose(x.points, y.points, rtol=0, atol=tol):
            return False
        if abs(x.validity_prob - y.validity_prob) > tol:
            return False
    for x, y in zip(a.patches, b.patches):
        if x.id != y.id or x.grid.shape != y.grid.shape or not np.allclose(x.grid, y.grid, rtol=0, atol=tol):
            return False
    if a.connectivity.shape != b.connectivity.shape or not np.allclose(a.connectivity, b.connectivity, rtol=0, atol=tol):
        return False
    if not panels_close(a.panels, b.panels, tol):
        return False
    for m1, m2 in ((a.patch_mask, b.patch_mask), (a.curve_mask, b.curve_mask)):
        if (m1 is None) != (m2 is None) or (m1 is not None and not np.array_equal(m1, m2)):
            return False
    return True


def panels_close(pa, pb, tol: float = 1e-9) -> bool:
    if len(pa) != len(pb):
        return False
    for x, y in zip(pa, pb):
        if x.patch_id != y.patch_id or abs(x.scale - y.scale) > tol or len(x.edges) != len(y.edges):
            return False
        for e, f in zip(x.edges, y.edges):
            if e.source_curve_id != f.source_curve_id or e.reversed != f.reversed:
                return False
            if e.points.shape != f.points.shape or not np.allclose(e.points, f.points, rtol=0, atol=tol):
                return False
    return True
