"""Topology refinement of raw predictions.

Threshold filtering, duplicate-curve merging, sub-curve removal and 2D loop
pruning, each producing a structure whose masks and binary connectivity
describe the surviving elements.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .loops import BRUTE_FORCE_LIMIT, prune_loop
from .metrics import chamfer_lower_bounds, pairwise_chamfer
from .model import GarmentStructure, LoopOrder, Panel, Stage


@dataclass(frozen=True)
class TopologyThresholds:
    eps_p: float = 0.7
    eps_c: float = 0.5
    eps_adj: float = 0.5
    dup_cd: float = 0.03
    sub_cd: float = 0.04
    prune_margin: float = 1e-9
    brute_force_limit: int = BRUTE_FORCE_LIMIT
    min_loop_edges: int = 3

    def __post_init__(self):
        for name in ("eps_p", "eps_c", "eps_adj"):
            v = getattr(self, name)
            if not (0 < v <= 1):
                raise ValueError(f"{name} must lie in (0, 1], got {v}")
        for name in ("dup_cd", "sub_cd", "prune_margin"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.brute_force_limit < 1 or self.min_loop_edges < 1:
            raise ValueError("brute_force_limit and min_loop_edges must be >= 1")


@dataclass(frozen=True)
class RefinementRules:
    """Which refinement rules run after thresholding (for ablations)."""

    duplicate_merge: bool = True
    subcurve_removal: bool = True
    loop_pruning: bool = True

    @classmethod
    def threshold_only(cls) -> "RefinementRules":
        return cls(False, False, False)


# cumulative ablation schedule: threshold only, + pruning, + sub-curves, + duplicates
ABLATION_SCHEDULE = (
    ("threshold only", RefinementRules(False, False, False)),
    ("+ 2D loop pruning", RefinementRules(False, False, True)),
    ("+ sub-curve removal", RefinementRules(False, True, True)),
    ("+ duplicate merging", RefinementRules(True, True, True)),
)


@dataclass
class RefinementLog:
    merged_pairs: list = field(default_factory=list)
    removed_subcurves: list = field(default_factory=list)
    pruned_edges: list = field(default_factory=list)
    orphaned_curves: list = field(default_factory=list)
    loop_costs: dict = field(default_factory=dict)  # patch id -> [before, after]

    def extend(self, other: "RefinementLog") -> "RefinementLog":
        self.merged_pairs += other.merged_pairs
        self.removed_subcurves += other.removed_subcurves
        self.pruned_edges += other.pruned_edges
        self.orphaned_curves += other.orphaned_curves
        self.loop_costs.update(other.loop_costs)
        return self

    def to_dict(self) -> dict:
        d = asdict(self)
        d["loop_costs"] = {str(k): v for k, v in self.loop_costs.items()}
        return d


# -- helpers ------------------------------------------------------------------

def _sync_panels(panels, conn: np.ndarray, s: GarmentStructure, patch_ok: np.ndarray):
    """Keep panels of valid patches and, in each, only edges whose curve is
    adjacent; adjacency without an edge is dropped so both stay consistent."""
    conn = conn.copy()
    curve_pos = {c.id: j for j, c in enumerate(s.curves)}
    out = []
    for pn in panels:
        i = s.patch_index(pn.patch_id)
        if not patch_ok[i]:
            continue
        seen = set()
        edges = []
        for e in pn.edges:
            j = curve_pos[e.source_curve_id]
            if conn[i, j] >= 0.5 and j not in seen:
                edges.append(e)
                seen.add(j)
        for j in np.flatnonzero(conn[i] >= 0.5):
            if j not in seen:
                conn[i, j] = 0.0
        lo = pn.loop_order if len(edges) == len(pn.edges) else None
        out.append(Panel(pn.patch_id, edges, pn.scale, lo))
    return out, conn


def _refined(s: GarmentStructure, panels, conn, patch_mask, curve_mask) -> GarmentStructure:
    return s.evolve(
        panels=tuple(panels),
        connectivity=conn,
        patch_mask=patch_mask,
        curve_mask=curve_mask,
        stage=Stage.TOPOLOGY_REFINED,
    )


# -- rules --------------------------------------------------------------------

def filter_thresholds(s: GarmentStructure, t: TopologyThresholds = TopologyThresholds()) -> GarmentStructure:
    """Binary masks and adjacency from validity/adjacency probabilities (>= cutoffs)."""
    pmask = np.array([p.validity_prob >= t.eps_p for p in s.patches], dtype=bool)
    cmask = np.array([c.validity_prob >= t.eps_c for c in s.curves], dtype=bool)
    conn = ((s.connectivity >= t.eps_adj) & pmask[:, None] & cmask[None, :]).astype(float)
    panels, conn = _sync_panels(s.panels, conn, s, pmask)
    return _refined(s, panels, conn, pmask, cmask)


def _curve_chamfer(s: GarmentStructure, idx, mask_fn):
    """``cd[x, y] = CD(C_x -> C_y)`` for curve positions ``idx``.

    ``mask_fn(lb)`` receives the lower-bound matrix and selects the pairs worth
    computing exactly; the others are left NaN (every comparison with NaN is
    false, so they never pass a threshold).
    """
    pts = [s.curves[j].points for j in idx]
    lb, _ = chamfer_lower_bounds(pts, pts)
    ab, _ = pairwise_chamfer(pts, pts, mask_fn(lb))
    return ab


def merge_duplicate_curves(s: GarmentStructure, t: TopologyThresholds = TopologyThresholds()):
    """Merge curve pairs whose Chamfer distance is below ``dup_cd`` both ways.

    The higher-probability curve survives and inherits the other's adjacency;
    in panels where only the discarded curve had an edge, that edge is
    relabelled to the survivor. Pairs are visited closest first until none
    with two surviving members remains.
    """
    log = RefinementLog()
    cmask = s.valid_curves().copy()
    idx = np.flatnonzero(cmask)
    if len(idx) < 2:
        return s, log
    cd = _curve_chamfer(s, idx, lambda lb: (lb < t.dup_cd) & (lb.T < t.dup_cd))
    cand = []
    for x in range(len(idx)):
        for y in range(x + 1, len(idx)):
            if cd[x, y] < t.dup_cd and cd[y, x] < t.dup_cd:
                cand.append((max(cd[x, y], cd[y, x]), int(idx[x]), int(idx[y]), float(cd[x, y]), float(cd[y, x])))
    cand.sort()
    conn = s.connectivity.copy()
    relabel = {}
    for _, a, b, cab, cba in cand:
        if not (cmask[a] and cmask[b]):
            continue
        ca, cb = s.curves[a], s.curves[b]
        # keep the more confident curve; ties keep the lower position
        keep, drop = (a, b) if ca.validity_prob >= cb.validity_prob else (b, a)
        cmask[drop] = False
        conn[:, keep] = np.maximum(conn[:, keep], conn[:, drop])
        conn[:, drop] = 0.0
        relabel[s.curves[drop].id] = s.curves[keep].id
        log.merged_pairs.append(
            {"kept": s.curves[keep].id, "removed": s.curves[drop].id, "cd_ab": cab, "cd_ba": cba}
        )
    if not relabel:
        return s, log

    def resolve(cid):
        while cid in relabel:
            cid = relabel[cid]
        return cid

    panels = []
    for pn in s.panels:
        own = {e.source_curve_id for e in pn.edges if e.source_curve_id not in relabel}
        edges = []
        for e in pn.edges:
            target = resolve(e.source_curve_id)
            if target == e.source_curve_id:
                edges.append(e)
            elif target not in own:
                edges.append(type(e)(target, e.points, e.reversed))
                own.add(target)
        panels.append(Panel(pn.patch_id, edges, pn.scale))
    panels, conn = _sync_panels(panels, conn, s, s.valid_patches())
    return _refined(s, panels, conn, s.valid_patches(), cmask), log


def remove_subcurves(s: GarmentStructure, t: TopologyThresholds = TopologyThresholds()):
    """Drop the shorter of two curves with identical adjacency columns when its
    directional Chamfer distance toward the longer one is below ``sub_cd``."""
    log = RefinementLog()
    cmask = s.valid_curves().copy()
    idx = np.flatnonzero(cmask)
    if len(idx) < 2:
        return s, log
    adj = s.connectivity >= 0.5
    lengths = {int(j): s.curves[j].length for j in idx}
    # shortest first: "shorter" ties break on lower probability, then later position
    ordered = sorted(idx.tolist(), key=lambda j: (lengths[j], s.curves[j].validity_prob, -j))
    rank = {j: k for k, j in enumerate(ordered)}
    cols = {int(j): adj[:, j].tobytes() for j in idx}
    same = np.array([[cols[int(x)] == cols[int(y)] for y in idx] for x in idx])
    cd = _curve_chamfer(s, idx, lambda lb: (lb < t.sub_cd) & same)
    pos = {int(j): k for k, j in enumerate(idx)}
    conn = s.connectivity.copy()
    for sub in ordered:
        if not adj[:, sub].any():
            continue
        for main in ordered[::-1]:
            if main == sub or rank[main] < rank[sub] or not cmask[main]:
                continue
            if cols[sub] != cols[main]:
                continue
            v = cd[pos[sub], pos[main]]
            if v < t.sub_cd:
                cmask[sub] = False
                conn[:, sub] = 0.0
                log.removed_subcurves.append({"removed": s.curves[sub].id, "main": s.curves[main].id, "cd": float(v)})
                break
    panels, conn = _sync_panels(s.panels, conn, s, s.valid_patches())
    return _refined(s, panels, conn, s.valid_patches(), cmask), log


def prune_loop_edges(edges, t: TopologyThresholds = TopologyThresholds()):
    """Remove edges that keep the panel loop from closing.

    Returns ``(kept_edges, removed_records, (cost_before, cost_after), loop_order)``;
    ``kept_edges`` are already reordered and flipped into their optimal loop.
    """
    keep, removed, sol = prune_loop(list(edges), t.prune_margin, t.min_loop_edges, t.brute_force_limit)
    kept = [edges[i] for i in keep]
    before = removed[0][1] if removed else sol.cost
    records = [
        {"curve": edges[k].source_curve_id, "cost_before": cb, "cost_after": ca} for k, cb, ca in removed
    ]
    return sol.apply(kept), records, (before, sol.cost), LoopOrder(sol.order, sol.flips)


def prune_panels(s: GarmentStructure, t: TopologyThresholds = TopologyThresholds()):
    log = RefinementLog()
    conn = s.connectivity.copy()
    curve_pos = {c.id: j for j, c in enumerate(s.curves)}
    panels = []
    for pn in s.panels:
        if not pn.edges:
            panels.append(pn)
            continue
        edges, records, costs, _ = prune_loop_edges(pn.edges, t)
        i = s.patch_index(pn.patch_id)
        for r in records:
            conn[i, curve_pos[r["curve"]]] = 0.0
            log.pruned_edges.append({"panel": pn.patch_id, **r})
        log.loop_costs[pn.patch_id] = [float(costs[0]), float(costs[1])]
        panels.append(Panel(pn.patch_id, edges, pn.scale))
    return _refined(s, panels, conn, s.valid_patches(), s.valid_curves()), log


def _drop_orphans(s: GarmentStructure, log: RefinementLog) -> GarmentStructure:
    cmask = s.valid_curves().copy()
    orphan = cmask & ~(s.connectivity >= 0.5).any(axis=0)
    if not orphan.any():
        return s
    log.orphaned_curves += [s.curves[j].id for j in np.flatnonzero(orphan)]
    cmask[orphan] = False
    return s.evolve(curve_mask=cmask)


def refine_topology(
    s: GarmentStructure,
    t: TopologyThresholds = TopologyThresholds(),
    rules: Optional[RefinementRules] = None,
):
    """Thresholds, then duplicate merging, sub-curve removal and loop pruning
    (each optional via ``rules``). Curves left without any adjacency are
    invalidated at the end."""
    if s.stage != Stage.RAW:
        raise ValueError(f"refine_topology expects a raw structure, got stage {s.stage.value}")
    rules = rules or RefinementRules()
    log = RefinementLog()
    out = filter_thresholds(s, t)
    if rules.duplicate_merge:
        out, lg = merge_duplicate_curves(out, t)
        log.extend(lg)
    if rules.subcurve_removal:
        out, lg = remove_subcurves(out, t)
        log.extend(lg)
    if rules.loop_pruning:
        out, lg = prune_panels(out, t)
        log.extend(lg)
    out = _drop_orphans(out, log)
    return out, log
