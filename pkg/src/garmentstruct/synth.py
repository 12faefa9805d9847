"""Seeded synthetic garments and a corruptor that imitates raw predictions.

Ground truths are built from quadrilateral panels (optionally with split
sides and a circular-arc hem) drawn in metric 2D and lifted to 3D by an
isometric map: flat placement in a plane or wrapping around a vertical
cylinder. Every curve is the lift of its 2D edge, so 2D and 3D agree exactly.
"""

from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass, replace
from enum import Enum
from typing import Callable, Optional

import numpy as np

from .model import Curve3D, Edge2D, GarmentStructure, Panel, Patch3D, Stage, canonical, normalize_panel_points
from .sampling import resample_polyline


class Template(str, Enum):
    RECT = "rect"
    TRAPEZOID = "trapezoid"
    ARC_HEM_SKIRT = "arc_skirt"
    TUBE = "tube"


@dataclass(frozen=True)
class TemplateSpec:
    template: Template = Template.RECT
    panel_count: int = 2
    edge_count_range: tuple = (4, 6)
    scale_range: tuple = (0.25, 0.6)  # half-extent of a panel side, metres
    seed: int = 0
    edge_samples: int = 50
    grid_size: int = 20

    def __post_init__(self):
        object.__setattr__(self, "template", Template(self.template))
        object.__setattr__(self, "edge_count_range", tuple(int(v) for v in self.edge_count_range))
        object.__setattr__(self, "scale_range", tuple(float(v) for v in self.scale_range))
        lo, hi = self.edge_count_range
        if self.panel_count < 1:
            raise ValueError("panel_count must be >= 1")
        if self.template == Template.TUBE and self.panel_count < 2:
            raise ValueError("a tube needs at least 2 panels")
        if not (4 <= lo <= hi <= 8):
            raise ValueError(f"edge_count_range must satisfy 4 <= min <= max <= 8, got {self.edge_count_range}")
        smin, smax = self.scale_range
        if not (0.1 <= smin <= smax):
            raise ValueError(f"scale_range must satisfy 0.1 <= min <= max, got {self.scale_range}")
        if self.edge_samples < 2 or self.grid_size < 2:
            raise ValueError("edge_samples and grid_size must be >= 2")
        if not (0 <= int(self.seed) < 2**64):
            raise ValueError("seed must be a 64-bit unsigned integer")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["template"] = self.template.value
        return d


@dataclass(frozen=True)
class CorruptionSpec:
    duplicate_curve_prob: float = 0.3
    duplicate_jitter: float = 0.01  # metres
    subcurve_prob: float = 0.2
    spurious_edge_prob: float = 0.25
    endpoint_jitter_sigma: float = 0.02  # panel-normalized units
    prob_noise_sigma: float = 0.05
    drop_prob: float = 0.2  # chance of a low-confidence ghost element per panel
    shuffle_edges: bool = True
    seed: int = 0

    def __post_init__(self):
        for name in ("duplicate_curve_prob", "subcurve_prob", "spurious_edge_prob", "drop_prob", "prob_noise_sigma"):
            v = getattr(self, name)
            if not (0 <= v <= 1):
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        for name in ("duplicate_jitter", "endpoint_jitter_sigma"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")

    @classmethod
    def none(cls, seed: int = 0) -> "CorruptionSpec":
        return cls(0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, False, seed)

    def to_dict(self) -> dict:
        return asdict(self)


# -- ground truth -------------------------------------------------------------

def _dense_line(a, b, n=64):
    t = np.linspace(0, 1, n)[:, None]
    return (1 - t) * np.asarray(a, float) + t * np.asarray(b, float)


def _dense_arc(a, b, sagitta, n=129):
    """Circular arc from a to b bulging by ``sagitta`` to the right of a->b."""
    a, b = np.asarray(a, float), np.asarray(b, float)
    chord = np.linalg.norm(b - a)
    mid = 0.5 * (a + b)
    d = (b - a) / chord
    right = np.array([d[1], -d[0]])
    r = (sagitta**2 + (chord / 2) ** 2) / (2 * sagitta)
    center = mid - right * (r - sagitta)
    a0 = np.arctan2(*(a - center)[::-1])
    a1 = np.arctan2(*(b - center)[::-1])
    # go the short way round through the bulge
    if a1 - a0 > np.pi:
        a1 -= 2 * np.pi
    elif a0 - a1 > np.pi:
        a1 += 2 * np.pi
    ang = np.linspace(a0, a1, n)
    pts = center + r * np.stack([np.cos(ang), np.sin(ang)], axis=1)
    pts[0], pts[-1] = a, b
    return pts


def _split_polyline(pts, fractions):
    """Cut a polyline at the given arc-length fractions (sorted, in (0, 1))."""
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    cum = np.concatenate([[0], np.cumsum(seg)]) / seg.sum()
    pieces, lo = [], 0.0
    for f in list(fractions) + [1.0]:
        mask = (cum > lo) & (cum < f)
        a = _interp(pts, cum, lo)
        b = _interp(pts, cum, f)
        pieces.append(np.vstack([a, pts[mask], b]))
        lo = f
    return pieces


def _interp(pts, cum, f):
    k = int(np.clip(np.searchsorted(cum, f, side="right") - 1, 0, len(pts) - 2))
    t = (f - cum[k]) / (cum[k + 1] - cum[k]) if cum[k + 1] > cum[k] else 0.0
    return pts[k] + t * (pts[k + 1] - pts[k])


@dataclass
class _Draft:
    corners: np.ndarray  # 4 x 2, counter-clockwise: bottom-left, bottom-right, top-right, top-left
    sides: list  # four dense polylines: bottom, right, top, left (counter-clockwise)
    lift: Callable
    shared: dict  # side index -> (key, reversed)


def _planar_lift(origin):
    def lift(p):
        p = np.asarray(p, float)
        return np.stack([p[:, 0] + origin[0], p[:, 1] + origin[1], np.full(len(p), origin[2])], axis=1)

    return lift


def _cylinder_lift(radius, theta0):
    def lift(p):
        p = np.asarray(p, float)
        th = theta0 + p[:, 0] / radius
        return np.stack([radius * np.cos(th), radius * np.sin(th), p[:, 1]], axis=1)

    return lift


def _quad_sides(c, arc_sagitta=0.0):
    bottom = _dense_arc(c[0], c[1], arc_sagitta) if arc_sagitta > 0 else _dense_line(c[0], c[1])
    return [bottom, _dense_line(c[1], c[2]), _dense_line(c[2], c[3]), _dense_line(c[3], c[0])]


def _drafts(spec: TemplateSpec, rng) -> list:
    lo, hi = spec.scale_range
    drafts = []
    if spec.template == Template.TUBE:
        h = 2 * rng.uniform(lo, hi)
        widths = 2 * rng.uniform(lo, hi, spec.panel_count)
        radius = widths.sum() / (2 * np.pi)
        theta = 0.0
        n = spec.panel_count
        for k, w in enumerate(widths):
            c = np.array([[0, 0], [w, 0], [w, h], [0, h]], float)
            shared = {1: (("seam", (k + 1) % n), False), 3: (("seam", k), True)}
            drafts.append(_Draft(c, _quad_sides(c), _cylinder_lift(radius, theta), shared))
            theta += w / radius
        return drafts

    x_cursor = 0.0
    for k in range(spec.panel_count):
        w = 2 * rng.uniform(lo, hi)
        h = 2 * rng.uniform(lo, hi)
        sag = 0.0
        if spec.template == Template.RECT:
            c = np.array([[0, 0], [w, 0], [w, h], [0, h]], float)
        elif spec.template == Template.TRAPEZOID:
            top = w * rng.uniform(0.5, 0.9)
            inset = 0.5 * (w - top)
            c = np.array([[0, 0], [w, 0], [w - inset, h], [inset, h]], float)
        else:
            waist = w * rng.uniform(0.55, 0.8)
            inset = 0.5 * (w - waist)
            c = np.array([[0, 0], [w, 0], [w - inset, h], [inset, h]], float)
            sag = w * rng.uniform(0.06, 0.14)
        lift = _planar_lift((x_cursor, 0.0, 0.0))
        if spec.template == Template.ARC_HEM_SKIRT:
            # each skirt panel wraps its own cylinder sector, panels do not touch
            radius = 1.5
            lift = _cylinder_lift(radius, (x_cursor + 0.1 * k) / radius)
        drafts.append(_Draft(c, _quad_sides(c, sag), lift, {}))
        x_cursor += w + 0.25
    return drafts


def _coons_grid(sides, corners, g):
    """Coons patch over the four sides, sampled g x g (rows = v, cols = u)."""
    def res(p):
        return resample_polyline(p, g)[0]

    bottom = res(sides[0])
    right = res(sides[1])
    top = res(sides[2])[::-1]  # left -> right
    left = res(sides[3])[::-1]  # bottom -> top
    u = np.linspace(0, 1, g)[None, :, None]
    v = np.linspace(0, 1, g)[:, None, None]
    c0, c1, c2, c3 = (corners[i][None, None, :] for i in range(4))
    ruled = (1 - v) * bottom[None] + v * top[None] + (1 - u) * left[:, None] + u * right[:, None]
    bilinear = (1 - u) * (1 - v) * c0 + u * (1 - v) * c1 + u * v * c2 + (1 - u) * v * c3
    return ruled - bilinear


def generate(spec: TemplateSpec) -> GarmentStructure:
    """Ground-truth structure with unit probabilities and exact connectivity."""
    rng = np.random.default_rng(spec.seed)
    drafts = _drafts(spec, rng)
    n_edges = rng.integers(spec.edge_count_range[0], spec.edge_count_range[1] + 1, len(drafts))

    curves, panels, patches = [], [], []
    shared_curves = {}
    adjacency = []
    for pid, (d, ne) in enumerate(zip(drafts, n_edges)):
        splittable = [k for k in range(4) if k not in d.shared]
        cuts = {k: 0 for k in range(4)}
        for _ in range(ne - 4):
            cuts[splittable[int(rng.integers(len(splittable)))]] += 1
        metric_edges, curve_ids, reversed_flags = [], [], []
        for k, side in enumerate(d.sides):
            if cuts[k]:
                m = cuts[k]
                fr = (np.arange(1, m + 1) + rng.uniform(-0.15, 0.15, m)) / (m + 1)
                pieces = _split_polyline(side, np.sort(fr))
            else:
                pieces = [side]
            for piece in pieces:
                pts, _ = resample_polyline(piece, spec.edge_samples)
                metric_edges.append(pts)
                key = d.shared.get(k)
                if key is not None and key[0] in shared_curves:
                    curve_ids.append(shared_curves[key[0]])
                    reversed_flags.append(True)
                    continue
                cid = len(curves)
                curves.append(Curve3D(cid, d.lift(pts)))
                curve_ids.append(cid)
                reversed_flags.append(False)
                if key is not None:
                    shared_curves[key[0]] = cid
        normed, scale, offset = normalize_panel_points(metric_edges)
        edges = [Edge2D(c, p, r) for c, p, r in zip(curve_ids, normed, reversed_flags)]
        panels.append(Panel(pid, edges, scale))
        patches.append(Patch3D(pid, d.lift(_coons_grid(d.sides, d.corners, spec.grid_size).reshape(-1, 2)).reshape(spec.grid_size, spec.grid_size, 3)))
        adjacency.append(curve_ids)

    conn = np.zeros((len(patches), len(curves)))
    for i, ids in enumerate(adjacency):
        conn[i, ids] = 1.0
    # emitted at storage precision so the corpus round-trips through JSON exactly
    return canonical(GarmentStructure(
        curves,
        patches,
        conn,
        panels,
        Stage.GROUND_TRUTH,
        np.ones(len(patches), bool),
        np.ones(len(curves), bool),
        {"template": spec.to_dict()},
    ))


# -- corruption ---------------------------------------------------------------

def _noisy_high(rng, sigma):
    return float(np.clip(1.0 - abs(rng.normal(0, sigma)), 0.0, 1.0)) if sigma > 0 else 1.0


def _noisy_low(rng, sigma):
    return float(np.clip(abs(rng.normal(0, sigma)), 0.0, 1.0)) if sigma > 0 else 0.0


def _arc_param(pts):
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    cum = np.concatenate([[0], np.cumsum(seg)])
    return cum / cum[-1] if cum[-1] > 0 else np.linspace(0, 1, len(pts))


def _portion(pts, lo, hi, n):
    pieces = _split_polyline(np.asarray(pts, float), [f for f in (lo, hi) if 0 < f < 1])
    if lo <= 0:
        piece = pieces[0]
    else:
        piece = pieces[1]
    return resample_polyline(piece, n)[0]


def _random_segment_2d(rng, n):
    a = rng.uniform(-0.7, 0.7, 2)
    ang = rng.uniform(0, 2 * np.pi)
    b = a + rng.uniform(0.3, 0.8) * np.array([np.cos(ang), np.sin(ang)])
    return _dense_line(a, b, n)


def corrupt(gt: GarmentStructure, c: CorruptionSpec) -> GarmentStructure:
    """A raw-stage imitation of a network prediction for ``gt``.

    Adds near-duplicate curves, sub-curve fragments, spurious panel edges and
    low-confidence ghosts; jitters edge endpoints, perturbs probabilities and
    shuffles/flips panel edges. ``meta['origin']`` maps every raw curve and
    patch id to the ground-truth id it came from (or None) and its kind.
    """
    rng = np.random.default_rng(c.seed)
    sig = c.prob_noise_sigma
    curves = [dict(id=cv.id, points=cv.points, prob=_noisy_high(rng, sig)) for cv in gt.curves]
    patches = [dict(id=p.id, grid=p.grid, prob=_noisy_high(rng, sig)) for p in gt.patches]
    origin_c = {cv.id: {"gt": cv.id, "kind": "gt"} for cv in gt.curves}
    origin_p = {p.id: {"gt": p.id, "kind": "gt"} for p in gt.patches}
    # adjacency as dict (patch id, curve id) -> prob; missing pairs are "off"
    adj = {}
    for i, p in enumerate(gt.patches):
        for j, cv in enumerate(gt.curves):
            if gt.connectivity[i, j] >= 0.5:
                adj[(p.id, cv.id)] = _noisy_high(rng, sig)
    panel_edges = {pn.patch_id: list(pn.edges) for pn in gt.panels}
    scales = {pn.patch_id: pn.scale for pn in gt.panels}
    next_curve = max([cv.id for cv in gt.curves], default=-1) + 1
    next_patch = max([p.id for p in gt.patches], default=-1) + 1

    def new_curve(points, prob, kind, src):
        nonlocal next_curve
        cid = next_curve
        next_curve += 1
        curves.append(dict(id=cid, points=np.asarray(points, float), prob=prob))
        origin_c[cid] = {"gt": src, "kind": kind}
        return cid

    for cv in gt.curves:
        if c.duplicate_curve_prob > 0 and rng.random() < c.duplicate_curve_prob:
            u = rng.normal(size=3)
            shift = c.duplicate_jitter * u / np.linalg.norm(u)
            cid = new_curve(cv.points + shift, float(rng.uniform(0.55, 0.85)), "duplicate", cv.id)
            for pid, edges in panel_edges.items():
                for e in [e for e in edges if e.source_curve_id == cv.id]:
                    v = rng.normal(size=2)
                    d2 = c.duplicate_jitter / scales[pid] * v / np.linalg.norm(v)
                    edges.append(Edge2D(cid, e.points + d2, e.reversed))
                    adj[(pid, cid)] = _noisy_high(rng, sig)
        if c.subcurve_prob > 0 and rng.random() < c.subcurve_prob:
            f = float(rng.uniform(0.4, 0.6))
            from_start = bool(rng.random() < 0.5)
            lo, hi = (0.0, f) if from_start else (1.0 - f, 1.0)
            cid = new_curve(_portion(cv.points, lo, hi, len(cv.points)), float(rng.uniform(0.55, 0.85)), "subcurve", cv.id)
            for pid, edges in panel_edges.items():
                for e in [e for e in edges if e.source_curve_id == cv.id]:
                    elo, ehi = (1.0 - hi, 1.0 - lo) if e.reversed else (lo, hi)
                    edges.append(Edge2D(cid, _portion(e.points, elo, ehi, len(e.points)), e.reversed))
                    adj[(pid, cid)] = _noisy_high(rng, sig)

    for p in gt.patches:
        pid = p.id
        if pid not in panel_edges:
            continue
        n_pts = len(panel_edges[pid][0].points) if panel_edges[pid] else 50
        if c.spurious_edge_prob > 0 and rng.random() < c.spurious_edge_prob:
            anchor = p.points[int(rng.integers(len(p.points)))]
            u = rng.normal(size=3)
            seg = _dense_line(anchor, anchor + rng.uniform(0.1, 0.3) * u / np.linalg.norm(u), n_pts)
            cid = new_curve(seg, float(rng.uniform(0.55, 0.85)), "spurious", None)
            panel_edges[pid].append(Edge2D(cid, _random_segment_2d(rng, n_pts), bool(rng.random() < 0.5)))
            adj[(pid, cid)] = _noisy_high(rng, sig)
        if c.drop_prob > 0 and rng.random() < c.drop_prob:
            anchor = p.points[int(rng.integers(len(p.points)))]
            u = rng.normal(size=3)
            seg = _dense_line(anchor, anchor + rng.uniform(0.1, 0.3) * u / np.linalg.norm(u), n_pts)
            cid = new_curve(seg, float(rng.uniform(0.05, 0.45)), "ghost", None)
            panel_edges[pid].append(Edge2D(cid, _random_segment_2d(rng, n_pts), False))
            adj[(pid, cid)] = _noisy_high(rng, sig)
    if c.drop_prob > 0 and gt.patches and rng.random() < c.drop_prob:
        src = gt.patches[int(rng.integers(len(gt.patches)))]
        u = rng.normal(size=3)
        grid = src.grid + 0.3 * u / np.linalg.norm(u)
        pid = next_patch
        patches.append(dict(id=pid, grid=grid, prob=float(rng.uniform(0.05, 0.6))))
        origin_p[pid] = {"gt": None, "kind": "ghost"}
        panel_edges[pid] = []
        scales[pid] = scales.get(src.id, 1.0)

    if c.endpoint_jitter_sigma > 0:
        for pid, edges in panel_edges.items():
            out = []
            for e in edges:
                t = _arc_param(e.points)[:, None]
                ds, de = rng.normal(0, c.endpoint_jitter_sigma, (2, 2))
                out.append(e.with_points(e.points + (1 - t) * ds + t * de))
            panel_edges[pid] = out

    if c.shuffle_edges:
        for pid in panel_edges:
            edges = panel_edges[pid]
            perm = rng.permutation(len(edges))
            flips = rng.random(len(edges)) < 0.5
            panel_edges[pid] = [edges[k].flipped() if f else edges[k] for k, f in zip(perm, flips)]

    curve_pos = {cv["id"]: j for j, cv in enumerate(curves)}
    conn = np.zeros((len(patches), len(curves)))
    if sig > 0:
        conn = np.clip(np.abs(rng.normal(0, sig, conn.shape)), 0, 1)
    patch_pos = {p["id"]: i for i, p in enumerate(patches)}
    for (pid, cid), v in adj.items():
        conn[patch_pos[pid], curve_pos[cid]] = v

    return canonical(GarmentStructure(
        [Curve3D(cv["id"], cv["points"], cv["prob"]) for cv in curves],
        [Patch3D(p["id"], p["grid"], p["prob"]) for p in patches],
        conn,
        [Panel(pid, panel_edges[pid], scales[pid]) for pid in [p["id"] for p in patches] if pid in panel_edges],
        Stage.RAW,
        meta={
            **gt.meta,
            "origin": {"curves": {str(k): v for k, v in origin_c.items()}, "patches": {str(k): v for k, v in origin_p.items()}},
            "corruption": c.to_dict(),
        },
    ))


# -- corpora ------------------------------------------------------------------

DEFAULT_TEMPLATE_SPECS = {
    Template.RECT: dict(panel_count=(1, 3), edge_count_range=(4, 6)),
    Template.TRAPEZOID: dict(panel_count=(1, 3), edge_count_range=(4, 6)),
    Template.ARC_HEM_SKIRT: dict(panel_count=(2, 4), edge_count_range=(4, 5)),
    Template.TUBE: dict(panel_count=(2, 5), edge_count_range=(4, 6)),
}


def sample_seed(seed: int, index: int, salt: str = "") -> int:
    """Per-sample 64-bit seed derived from the corpus seed and sample index."""
    h = hashlib.sha256(f"{int(seed)}:{int(index)}:{salt}".encode()).digest()
    return int.from_bytes(h[:8], "little")


def corpus_specs(count: int, seed: int, templates=None, panel_count: Optional[int] = None,
                 edge_count_range=None, scale_range=None, corruption: Optional[CorruptionSpec] = None,
                 edge_samples: int = 50, grid_size: int = 20):
    """Deterministic (TemplateSpec, CorruptionSpec) pairs for a corpus.

    Templates cycle in the given order; unspecified panel counts are drawn
    from each template's default range with the per-sample seed.
    """
    templates = [Template(t) for t in (templates or list(Template))]
    corruption = corruption or CorruptionSpec()
    out = []
    for k in range(count):
        tmpl = templates[k % len(templates)]
        s = sample_seed(seed, k)
        defaults = DEFAULT_TEMPLATE_SPECS[tmpl]
        rng = np.random.default_rng(s)
        pc = panel_count if panel_count is not None else int(rng.integers(defaults["panel_count"][0], defaults["panel_count"][1] + 1))
        if tmpl == Template.TUBE:
            pc = max(pc, 2)
        kw = dict(template=tmpl, panel_count=pc, seed=s, edge_samples=edge_samples, grid_size=grid_size,
                  edge_count_range=edge_count_range or defaults["edge_count_range"])
        if scale_range is not None:
            kw["scale_range"] = scale_range
        out.append((TemplateSpec(**kw), replace(corruption, seed=sample_seed(seed, k, "corrupt"))))
    return out


def make_sample(tspec: TemplateSpec, cspec: CorruptionSpec):
    gt = generate(tspec)
    return gt, corrupt(gt, cspec)


def make_corpus(count: int, seed: int = 0, templates=None, corruption: Optional[CorruptionSpec] = None, **kw):
    return [make_sample(t, c) for t, c in corpus_specs(count, seed, templates, corruption=corruption, **kw)]
