"""Chamfer distances, Hungarian matching, panel IoU and the evaluation report.

All Chamfer values are unsquared: the directional distance is the mean
Euclidean distance from each point of the source set to its nearest point in
the target set, and the symmetric distance averages both directions.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields
from typing import Optional

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist

from .model import GarmentStructure, Panel
from .sampling import sample_patch_adaptive
from .triangulate import boundary_polygon

CHAMFER_CONVENTION = "unsquared mean nearest-neighbour distance; symmetric = average of both directions"
BCE_CLAMP = 1e-7


# -- Chamfer ------------------------------------------------------------------

def _as_points(a) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or len(a) == 0:
        raise ValueError("Chamfer distance needs a non-empty (n, d) point set")
    return a


def nearest_distances(a, b) -> np.ndarray:
    """Distance from every point of ``a`` to its nearest neighbour in ``b``.

    Small sets are compared exhaustively; larger ones use a KD-tree to pick
    the neighbour. Either way the distance is evaluated as
    ``sqrt(dx*dx + dy*dy [+ dz*dz])`` so values are reproducible bit for bit.
    """
    a, b = _as_points(a), _as_points(b)
    if a.shape[1] != b.shape[1]:
        raise ValueError("point sets differ in dimension")
    if len(a) * len(b) <= 40000:
        d2 = (a[:, None, 0] - b[None, :, 0]) ** 2
        for k in range(1, a.shape[1]):
            d2 = d2 + (a[:, None, k] - b[None, :, k]) ** 2
        return np.sqrt(d2.min(axis=1))
    _, idx = cKDTree(b).query(a)
    q = b[idx]
    d2 = (a[:, 0] - q[:, 0]) ** 2
    for k in range(1, a.shape[1]):
        d2 = d2 + (a[:, k] - q[:, k]) ** 2
    return np.sqrt(d2)


def chamfer_directional(a, b) -> float:
    return math.fsum(nearest_distances(a, b)) / len(a)


def chamfer_symmetric(a, b) -> float:
    return 0.5 * (chamfer_directional(a, b) + chamfer_directional(b, a))


def pairwise_chamfer(sets_a, sets_b, mask=None):
    """Directional Chamfer for pairs of point sets.

    Returns ``(ab, ba)`` with ``ab[i, j] = CD(A_i -> B_j)`` and
    ``ba[i, j] = CD(B_j -> A_i)``. With a boolean ``mask`` only the selected
    pairs are computed and the rest are NaN.
    """
    na, nb = len(sets_a), len(sets_b)
    ab = np.full((na, nb), np.nan)
    ba = np.full((na, nb), np.nan)
    if na == 0 or nb == 0:
        return ab, ba
    sets_b = [np.asarray(x, dtype=float) for x in sets_b]
    for i, a in enumerate(sets_a):
        cols = np.arange(nb) if mask is None else np.flatnonzero(mask[i])
        if len(cols) == 0:
            continue
        sizes = np.array([len(sets_b[j]) for j in cols])
        offsets = np.concatenate([[0], np.cumsum(sizes)[:-1]])
        d = cdist(np.asarray(a, dtype=float), np.concatenate([sets_b[j] for j in cols]))
        ab[i, cols] = np.minimum.reduceat(d, offsets, axis=1).mean(axis=0)
        ba[i, cols] = np.add.reduceat(d.min(axis=0), offsets) / sizes
    return ab, ba


def chamfer_lower_bounds(sets_a, sets_b):
    """Cheap lower bounds ``(lb_ab, lb_ba)`` of the directional Chamfer matrices.

    Every nearest-neighbour distance between two sets is at least the gap
    between their bounding boxes, so the gap bounds both directions.
    """
    na, nb = len(sets_a), len(sets_b)
    if na == 0 or nb == 0:
        return np.zeros((na, nb)), np.zeros((na, nb))
    lo_a = np.array([np.min(x, axis=0) for x in sets_a])
    hi_a = np.array([np.max(x, axis=0) for x in sets_a])
    lo_b = np.array([np.min(x, axis=0) for x in sets_b])
    hi_b = np.array([np.max(x, axis=0) for x in sets_b])
    gap = np.maximum(np.maximum(lo_b[None] - hi_a[:, None], lo_a[:, None] - hi_b[None]), 0.0)
    lb = np.sqrt((gap**2).sum(-1))
    return lb, lb.copy()


# -- Hungarian matching -------------------------------------------------------

@dataclass(frozen=True)
class Matching:
    pairs: tuple  # (pred index, gt index)
    unmatched_pred: tuple
    unmatched_gt: tuple
    total_cost: float

    def pred_to_gt(self) -> dict:
        return dict(self.pairs)

    def gt_to_pred(self) -> dict:
        return {g: p for p, g in self.pairs}


def hungarian_match(cost, rows=None, cols=None) -> Matching:
    """Minimum-cost assignment of ``min(rows, cols)`` pairs.

    ``rows``/``cols`` optionally relabel matrix positions (e.g. positions of
    valid elements inside a larger list).
    """
    cost = np.asarray(cost, dtype=float)
    if cost.ndim != 2:
        cost = cost.reshape(len(rows or []), len(cols or []))
    if cost.size and (not np.all(np.isfinite(cost)) or cost.min() < 0):
        raise ValueError("cost matrix must be finite and non-negative")
    rows = list(range(cost.shape[0])) if rows is None else list(rows)
    cols = list(range(cost.shape[1])) if cols is None else list(cols)
    if cost.size == 0:
        return Matching((), tuple(rows), tuple(cols), 0.0)
    r, c = linear_sum_assignment(cost)
    pairs = tuple(sorted((rows[i], cols[j]) for i, j in zip(r, c)))
    total = math.fsum(cost[i, j] for i, j in zip(r, c))
    mr, mc = set(r.tolist()), set(c.tolist())
    return Matching(
        pairs,
        tuple(rows[i] for i in range(len(rows)) if i not in mr),
        tuple(cols[j] for j in range(len(cols)) if j not in mc),
        total,
    )


def _subgrid(grid: np.ndarray, stride: int) -> np.ndarray:
    g = grid.shape[0]
    idx = sorted(set(range(0, g, stride)) | {g - 1})
    return grid[np.ix_(idx, idx)].reshape(-1, 3)


def match_point_sets(sets_a, sets_b, rows=None, cols=None, seed_k: int = 3) -> Matching:
    """Hungarian matching of two families of point sets by symmetric Chamfer.

    Only a few pairs are evaluated exactly: the assignment is solved on a
    matrix holding lower bounds elsewhere, and any bounded entry the solution
    uses is then computed exactly and the problem re-solved. Once the optimum
    uses exact entries only, its true cost is no larger than any other
    assignment's, so it is optimal for the full matrix.
    """
    na, nb = len(sets_a), len(sets_b)
    if na == 0 or nb == 0:
        return hungarian_match(np.zeros((na, nb)), rows, cols)
    lb_ab, lb_ba = chamfer_lower_bounds(sets_a, sets_b)
    cost = 0.5 * (lb_ab + lb_ba)
    exact = np.zeros((na, nb), dtype=bool)
    want = np.zeros_like(exact)
    k = min(seed_k, nb)
    want[np.arange(na)[:, None], np.argsort(cost, axis=1, kind="stable")[:, :k]] = True
    k = min(seed_k, na)
    want[np.argsort(cost, axis=0, kind="stable")[:k], np.arange(nb)[None, :]] = True
    while True:
        todo = want & ~exact
        if todo.any():
            ab, ba = pairwise_chamfer(sets_a, sets_b, todo)
            cost[todo] = 0.5 * (ab[todo] + ba[todo])
            exact |= todo
        r, c = linear_sum_assignment(cost)
        missing = ~exact[r, c]
        if not missing.any():
            break
        want[r[missing], c[missing]] = True
    return hungarian_match(cost, rows, cols)


def match_elements(pred: GarmentStructure, gt: GarmentStructure, grid_stride: int = 2):
    """Hungarian matching of patches and curves by symmetric Chamfer cost.

    Only valid elements take part. Patch costs use a strided subgrid
    (``grid_stride``) to keep large structures cheap; panels inherit the patch
    matching. Indices in the returned matchings are positions in the full
    ``patches`` / ``curves`` / ``panels`` lists.
    """
    pv = np.flatnonzero(pred.valid_patches())
    gv = np.flatnonzero(gt.valid_patches())
    patches = match_point_sets(
        [_subgrid(pred.patches[i].grid, grid_stride) for i in pv],
        [_subgrid(gt.patches[j].grid, grid_stride) for j in gv],
        pv.tolist(),
        gv.tolist(),
    )

    cv = np.flatnonzero(pred.valid_curves())
    hv = np.flatnonzero(gt.valid_curves())
    curves = match_point_sets([pred.curves[i].points for i in cv], [gt.curves[j].points for j in hv], cv.tolist(), hv.tolist())

    pred_panel_at = {pn.patch_id: k for k, pn in enumerate(pred.panels)}
    gt_panel_at = {pn.patch_id: k for k, pn in enumerate(gt.panels)}
    pairs = []
    for i, j in patches.pairs:
        a = pred_panel_at.get(pred.patches[i].id)
        b = gt_panel_at.get(gt.patches[j].id)
        if a is not None and b is not None:
            pairs.append((a, b))
    valid_pred_panels = [pred_panel_at[pn.patch_id] for pn in pred.valid_panels()]
    valid_gt_panels = [gt_panel_at[pn.patch_id] for pn in gt.valid_panels()]
    mp, mg = {a for a, _ in pairs}, {b for _, b in pairs}
    panels = Matching(
        tuple(sorted(pairs)),
        tuple(k for k in valid_pred_panels if k not in mp),
        tuple(k for k in valid_gt_panels if k not in mg),
        0.0,
    )
    return patches, curves, panels


# -- rasterized IoU -----------------------------------------------------------

def _fill_mask(poly: np.ndarray, x0: float, step: float, n: int) -> np.ndarray:
    """Even-odd fill of ``poly`` sampled at the centres of an n x n pixel grid
    whose first centre is at (x0[0], x0[1]) with spacing ``step``."""
    a, b = poly, np.roll(poly, -1, axis=0)
    lo = np.minimum(a[:, 1], b[:, 1])
    hi = np.maximum(a[:, 1], b[:, 1])
    # candidate rows per edge (one row of slack each side); the exact
    # half-open crossing test below decides
    r0 = np.clip(np.floor((lo - x0[1]) / step).astype(int) - 1, 0, n)
    r1 = np.clip(np.ceil((hi - x0[1]) / step).astype(int) + 1, 0, n)
    span = np.maximum(r1 - r0, 0)
    edge = np.repeat(np.arange(len(a)), span)
    rows = np.arange(span.sum()) - np.repeat(np.cumsum(span) - span, span) + np.repeat(r0, span)
    y = x0[1] + step * rows
    ay, by = a[edge, 1], b[edge, 1]
    hit = (ay <= y) != (by <= y)
    edge, rows, y, ay, by = edge[hit], rows[hit], y[hit], ay[hit], by[hit]
    t = (y - ay) / (by - ay)
    xint = a[edge, 0] + t * (b[edge, 0] - a[edge, 0])
    # a crossing at x toggles every pixel whose centre lies at or right of x
    k = np.clip(np.ceil((xint - x0[0]) / step), 0, n).astype(int)
    acc = np.bincount(rows * (n + 1) + k, minlength=n * (n + 1)).reshape(n, n + 1)
    return (np.cumsum(acc, axis=1)[:, :n] % 2).astype(bool)


def polygon_iou(poly_a: np.ndarray, poly_b: np.ndarray, resolution: int = 256) -> float:
    """Pixel IoU of two polygons on a shared frame.

    The frame is centred at the midpoint of the two vertex centroids and sized
    so the union bounding box fits with a 5% margin.
    """
    both = np.concatenate([poly_a, poly_b])
    center = 0.5 * (poly_a.mean(axis=0) + poly_b.mean(axis=0))
    half = float(np.abs(both - center).max()) * 1.05
    if half <= 0:
        return 0.0
    step = 2 * half / resolution
    x0 = center - half + 0.5 * step
    ma, mb = _fill_mask(poly_a, x0, step, resolution), _fill_mask(poly_b, x0, step, resolution)
    union = np.count_nonzero(ma | mb)
    if union == 0:
        return 0.0
    return np.count_nonzero(ma & mb) / union


def metric_polygon(panel: Panel, closure_tol: float = 1e-6) -> np.ndarray:
    return boundary_polygon(panel.edges, closure_tol) * panel.scale


def rasterize_panel_pair(pred_panel: Panel, gt_panel: Panel, resolution: int = 256, closure_tol: float = 1e-6) -> float:
    """IoU of two panels rasterized in metric units; open boundaries raise."""
    return polygon_iou(metric_polygon(pred_panel, closure_tol), metric_polygon(gt_panel, closure_tol), resolution)


# -- report -------------------------------------------------------------------

@dataclass(frozen=True)
class MetricConfig:
    w_geo: float = 300.0
    w_cls: float = 1.0
    w_scale: float = 0.01
    raster_resolution: int = 256
    neg_weight: float = 1.0  # BCE weight of targets equal to 0 (unmatched queries)
    adaptive_spacing: float = 0.05  # metres, for the adaptive patch CD
    closure_tol: float = 1e-6
    match_grid_stride: int = 2

    def __post_init__(self):
        for name in ("w_geo", "w_cls", "w_scale", "neg_weight"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.raster_resolution < 16:
            raise ValueError("raster_resolution must be >= 16")
        if self.adaptive_spacing <= 0:
            raise ValueError("adaptive_spacing must be positive")


METRIC_COLUMNS = ("acc_p", "acc_e", "acc_o", "cd_e", "iou", "cd_p_base", "cd_p_adapt", "cd_c")
LOSS_COLUMNS = ("loss_geo", "loss_cls", "loss_scale", "loss_total")


@dataclass
class MetricReport:
    acc_p: Optional[float] = None
    acc_e: Optional[float] = None
    acc_o: Optional[float] = None
    cd_e: Optional[float] = None
    iou: Optional[float] = None
    cd_p_base: Optional[float] = None
    cd_p_adapt: Optional[float] = None
    cd_c: Optional[float] = None
    loss_geo: Optional[float] = None
    loss_cls: Optional[float] = None
    loss_scale: Optional[float] = None
    loss_total: Optional[float] = None
    sample_count: int = 1
    # number of element pairs behind each averaged geometric metric
    counts: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["chamfer"] = CHAMFER_CONVENTION
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "MetricReport":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


def _bce(p: np.ndarray, target: np.ndarray, neg_weight: float) -> float:
    p = np.asarray(p, dtype=float)
    if p.size and (p.min() < 0 or p.max() > 1):
        raise ValueError("probabilities must lie in [0, 1]")
    q = np.clip(p, BCE_CLAMP, 1 - BCE_CLAMP)
    t = np.asarray(target, dtype=float)
    terms = -(t * np.log(q) + neg_weight * (1 - t) * np.log(1 - q))
    return math.fsum(terms.ravel())


def _edge_pairs(pred_panel: Panel, gt_panel: Panel, curve_map: dict, pred: GarmentStructure, gt: GarmentStructure):
    """(pred edge, gt edge) pairs linked through the curve matching."""
    gt_edge_by_curve = {e.source_curve_id: e for e in gt_panel.edges}
    pred_curve_pos = {c.id: i for i, c in enumerate(pred.curves)}
    out = []
    for e in pred_panel.edges:
        j = curve_map.get(pred_curve_pos[e.source_curve_id])
        if j is None:
            continue
        g = gt_edge_by_curve.get(gt.curves[j].id)
        if g is not None:
            out.append((e, g))
    return out


def compute_losses(pred: GarmentStructure, gt: GarmentStructure, matchings, cfg: MetricConfig = MetricConfig(), pair_cds=None):
    """Weighted geometric, classification and scale losses for matched elements.

    ``pair_cds`` may carry already computed ``(patch_cds, curve_cds)`` in the
    order of the matching pairs. Returns ``(loss_geo, loss_cls, loss_scale, loss_total)``.
    """
    patches, curves, panels = matchings
    if pair_cds is None:
        geo = [chamfer_symmetric(pred.patches[i].points, gt.patches[j].points) for i, j in patches.pairs]
        geo += [chamfer_symmetric(pred.curves[i].points, gt.curves[j].points) for i, j in curves.pairs]
    else:
        geo = list(pair_cds[0]) + list(pair_cds[1])
    cmap = curves.pred_to_gt()
    for a, b in panels.pairs:
        for e, g in _edge_pairs(pred.panels[a], gt.panels[b], cmap, pred, gt):
            geo.append(chamfer_symmetric(e.points, g.points))
    loss_geo = cfg.w_geo * math.fsum(geo)

    pmap = patches.pred_to_gt()
    tp = np.array([1.0 if i in pmap else 0.0 for i in range(pred.n_patches)])
    tc = np.array([1.0 if i in cmap else 0.0 for i in range(pred.n_curves)])
    tpc = np.zeros_like(pred.connectivity)
    for i, gi in pmap.items():
        for j, gj in cmap.items():
            tpc[i, j] = 1.0 if gt.connectivity[gi, gj] >= 0.5 else 0.0
    cls = _bce([p.validity_prob for p in pred.patches], tp, cfg.neg_weight)
    cls += _bce([c.validity_prob for c in pred.curves], tc, cfg.neg_weight)
    cls += _bce(pred.connectivity, tpc, cfg.neg_weight)
    loss_cls = cfg.w_cls * cls

    loss_scale = cfg.w_scale * math.fsum((pred.panels[a].scale - gt.panels[b].scale) ** 2 for a, b in panels.pairs)
    return loss_geo, loss_cls, loss_scale, loss_geo + loss_cls + loss_scale


def bce_floor(n_terms: int) -> float:
    """BCE of ``n_terms`` predictions that equal their binary targets exactly."""
    return n_terms * -math.log(1 - BCE_CLAMP)


def _mean(xs):
    return math.fsum(xs) / len(xs) if xs else None


def overall_accuracy(acc_p: Optional[float], acc_e: Optional[float]) -> Optional[float]:
    if acc_p is None:
        return None
    if acc_e is None:
        return 0.0 if acc_p == 0 else None
    return acc_p * acc_e


def evaluate(pred: GarmentStructure, gt: GarmentStructure, cfg: MetricConfig = MetricConfig()) -> MetricReport:
    matchings = match_elements(pred, gt, cfg.match_grid_stride)
    patches, curves, panels = matchings

    n_pred, n_gt = len(pred.valid_panels()), len(gt.valid_panels())
    acc_p = 1.0 if n_pred == n_gt else 0.0
    acc_e = None
    if acc_p == 1.0 and panels.pairs:
        acc_e = sum(len(pred.panels[a].edges) == len(gt.panels[b].edges) for a, b in panels.pairs) / len(panels.pairs)
    elif acc_p == 1.0 and n_gt == 0:
        acc_e = 1.0

    cd_e, ious = [], []
    for a, b in panels.pairs:
        pp, gp = pred.panels[a], gt.panels[b]
        if pp.edges and gp.edges:
            cd_e.append(chamfer_symmetric(pp.boundary() * pp.scale, gp.boundary() * gp.scale))
        try:
            ious.append(rasterize_panel_pair(pp, gp, cfg.raster_resolution, cfg.closure_tol))
        except ValueError:
            pass  # open or empty boundary: IoU undefined for this pair

    cd_p_base, cd_p_adapt = [], []
    for i, j in patches.pairs:
        P, G = pred.patches[i], gt.patches[j]
        cd_p_base.append(chamfer_symmetric(P.points, G.points))
        cd_p_adapt.append(
            chamfer_symmetric(sample_patch_adaptive(P, cfg.adaptive_spacing), sample_patch_adaptive(G, cfg.adaptive_spacing))
        )
    cd_c = [chamfer_symmetric(pred.curves[i].points, gt.curves[j].points) for i, j in curves.pairs]

    lg, lc, ls, lt = compute_losses(pred, gt, matchings, cfg, (cd_p_base, cd_c))
    return MetricReport(
        acc_p=acc_p,
        acc_e=acc_e,
        acc_o=overall_accuracy(acc_p, acc_e),
        cd_e=_mean(cd_e),
        iou=_mean(ious),
        cd_p_base=_mean(cd_p_base),
        cd_p_adapt=_mean(cd_p_adapt),
        cd_c=_mean(cd_c),
        loss_geo=lg,
        loss_cls=lc,
        loss_scale=ls,
        loss_total=lt,
        sample_count=1,
        counts={
            "cd_e": len(cd_e),
            "iou": len(ious),
            "cd_p_base": len(cd_p_base),
            "cd_p_adapt": len(cd_p_adapt),
            "cd_c": len(cd_c),
        },
    )


def aggregate(reports) -> MetricReport:
    """Corpus report: accuracies averaged over samples where they are defined,
    geometric metrics pooled over matched element pairs, losses averaged over
    samples. ``acc_o`` is the product of the aggregate accuracies."""
    reports = list(reports)
    out = MetricReport(sample_count=len(reports))
    if not reports:
        return out
    out.acc_p = _mean([r.acc_p for r in reports if r.acc_p is not None])
    out.acc_e = _mean([r.acc_e for r in reports if r.acc_e is not None])
    out.acc_o = None if out.acc_p is None or out.acc_e is None else out.acc_p * out.acc_e
    for name in ("cd_e", "iou", "cd_p_base", "cd_p_adapt", "cd_c"):
        num, den = [], 0
        for r in reports:
            v, n = getattr(r, name), r.counts.get(name, 1 if getattr(r, name) is not None else 0)
            if v is not None and n:
                num.append(v * n)
                den += n
        setattr(out, name, math.fsum(num) / den if den else None)
        out.counts[name] = den
    for name in LOSS_COLUMNS:
        setattr(out, name, _mean([getattr(r, name) for r in reports if getattr(r, name) is not None]))
    return out


def format_table(rows, columns=METRIC_COLUMNS) -> str:
    """Aligned plain-text table; ``rows`` is a list of (label, MetricReport)."""
    header = ["sample"] + list(columns)
    body = []
    for label, r in rows:
        vals = [getattr(r, c) for c in columns]
        body.append([label] + ["-" if v is None else f"{v:.4f}" for v in vals])
    widths = [max(len(str(x)) for x in col) for col in zip(header, *body)]
    lines = ["  ".join(str(x).rjust(w) if k else str(x).ljust(w) for k, (x, w) in enumerate(zip(line, widths))) for line in [header] + body]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


# -- corpus -------------------------------------------------------------------

@dataclass
class CorpusReport:
    aggregate: MetricReport
    samples: list  # (name, MetricReport), sorted by name
    missing: list  # names present in only one directory

    def to_dict(self) -> dict:
        return {
            "aggregate": self.aggregate.to_dict(),
            "samples": {name: r.to_dict() for name, r in self.samples},
            "missing": list(self.missing),
        }


def structure_files(directory) -> dict:
    """``{stem: path}`` of the structure JSON files in ``directory`` (manifest excluded)."""
    from pathlib import Path

    return {p.stem: p for p in sorted(Path(directory).glob("*.json")) if p.name != "manifest.json"}


def _evaluate_files(args) -> MetricReport:
    from .model import load

    pred_path, gt_path, cfg = args
    return evaluate(load(pred_path), load(gt_path), cfg)


def evaluate_corpus(pred_dir, gt_dir, cfg: MetricConfig = MetricConfig(), map_fn=map) -> CorpusReport:
    """Evaluate every file of ``pred_dir`` against the same-named file of ``gt_dir``.

    ``map_fn`` must preserve order (``map`` or an executor's ``map``); names
    without a partner are reported in ``missing`` and skipped.
    """
    pred, gt = structure_files(pred_dir), structure_files(gt_dir)
    names = sorted(set(pred) & set(gt))
    missing = sorted(set(pred) ^ set(gt))
    reports = list(map_fn(_evaluate_files, [(pred[n], gt[n], cfg) for n in names]))
    return CorpusReport(aggregate(reports), list(zip(names, reports)), missing)
