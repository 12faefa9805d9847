"""SVG panel layouts and Wavefront OBJ point/line/face dumps."""

from __future__ import annotations

from pathlib import Path
from xml.sax.saxutils import quoteattr

import numpy as np

from .model import GarmentStructure, denormalize_panel

_PALETTE = (
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
    "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
)


def svg_document(s: GarmentStructure, px_per_m: float = 400.0, gap: float = 0.1) -> str:
    """Panels laid out left to right at metric scale, one <g> per panel."""
    groups = []
    x_cursor = gap
    height = 0.0
    for panel in s.panels:
        edges = denormalize_panel(panel)
        if not edges:
            continue
        pts = np.concatenate([e.points for e in edges])
        lo, hi = pts.min(axis=0), pts.max(axis=0)
        shift = np.array([x_cursor - lo[0], gap - lo[1]])
        lines = []
        for k, e in enumerate(edges):
            q = (e.points + shift) * px_per_m
            coords = " ".join(f"{x:.3f},{y:.3f}" for x, y in q)
            lines.append(
                f'    <polyline points="{coords}" fill="none" stroke="{_PALETTE[k % len(_PALETTE)]}" '
                f'stroke-width="2" data-curve={quoteattr(str(e.source_curve_id))}/>'
            )
        groups.append(f'  <g id="panel-{panel.patch_id}">\n' + "\n".join(lines) + "\n  </g>")
        x_cursor += (hi[0] - lo[0]) + gap
        height = max(height, hi[1] - lo[1])
    w = max(x_cursor, gap) * px_per_m
    h = (height + 2 * gap) * px_per_m
    body = "\n".join(groups)
    return (
        '<?xml version="1.0" encoding="UTF-8"?>\n'
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{w:.1f}" height="{h:.1f}" '
        f'viewBox="0 0 {w:.1f} {h:.1f}">\n'
        + (body + "\n" if body else "")
        + "</svg>\n"
    )


def export_svg(s: GarmentStructure, path) -> None:
    Path(path).write_text(svg_document(s))


def obj_document(s: GarmentStructure, triangulations: dict | None = None) -> str:
    """Patch grid points and curve points as vertices, curves as ``l`` elements.

    ``triangulations`` maps patch id -> Triangulation; those panels are written
    as extra vertices (metric 2D, z = 0) with ``f`` faces.
    """
    out = ["# garment structure export"]
    n = 0
    for p in s.patches:
        out.append(f"o patch_{p.id}")
        out.extend(f"v {x:.9g} {y:.9g} {z:.9g}" for x, y, z in p.points)
        n += len(p.points)
    for c in s.curves:
        out.append(f"o curve_{c.id}")
        out.extend(f"v {x:.9g} {y:.9g} {z:.9g}" for x, y, z in c.points)
        out.append("l " + " ".join(str(n + k + 1) for k in range(len(c.points))))
        n += len(c.points)
    if triangulations:
        scales = {pn.patch_id: pn.scale for pn in s.panels}
        for pid in sorted(triangulations):
            tri = triangulations[pid]
            out.append(f"o panel_{pid}")
            out.extend(f"v {x:.9g} {y:.9g} 0" for x, y in tri.vertices * scales.get(pid, 1.0))
            out.extend(f"f {a + n + 1} {b + n + 1} {c + n + 1}" for a, b, c in tri.triangles)
            n += len(tri.vertices)
    return "\n".join(out) + "\n"


def export_obj(s: GarmentStructure, path, triangulations: dict | None = None) -> None:
    Path(path).write_text(obj_document(s, triangulations))
