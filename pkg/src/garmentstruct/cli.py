"""Command line front end: synth, refine, eval, render, triangulate.

Exit status is 0 on full success, 1 when some samples failed and 2 for usage
or validation errors. Settings come from (lowest to highest precedence) the
built-in defaults, a ``--config`` TOML/JSON file and explicit flags.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .geometry import GeometryParams, refine
from .metrics import METRIC_COLUMNS, MetricConfig, evaluate_corpus, format_table, structure_files
from .model import Stage, ValidationError, dumps, load
from .synth import CorruptionSpec, Template, corpus_specs, make_sample
from .topology import RefinementRules, TopologyThresholds
from .triangulate import triangulate_panel

JOBS_ENV = "GARMENTSTRUCT_JOBS"
EXIT_OK, EXIT_PARTIAL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def default_jobs() -> int:
    env = os.environ.get(JOBS_ENV)
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return os.cpu_count() or 1


def _pmap(fn, items, jobs: int):
    """Order-preserving map, in a process pool when ``jobs > 1``."""
    items = list(items)
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=min(jobs, len(items))) as ex:
        return list(ex.map(fn, items))


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def _json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, allow_nan=False) + "\n"


def _input_files(directory) -> dict:
    d = Path(directory)
    if not d.is_dir():
        raise UsageError(f"input directory not found: {d}")
    return structure_files(d)


# -- synth --------------------------------------------------------------------

def _synth_one(job):
    tspec, cspec = job
    gt, raw = make_sample(tspec, cspec)
    return dumps(gt), dumps(raw)


def cmd_synth(a) -> int:
    corruption = CorruptionSpec.none() if a.clean else CorruptionSpec(
        duplicate_curve_prob=a.duplicate_curve_prob,
        duplicate_jitter=a.duplicate_jitter,
        subcurve_prob=a.subcurve_prob,
        spurious_edge_prob=a.spurious_edge_prob,
        endpoint_jitter_sigma=a.endpoint_jitter_sigma,
        prob_noise_sigma=a.prob_noise_sigma,
        drop_prob=a.drop_prob,
        shuffle_edges=not a.no_shuffle_edges,
    )
    if a.count < 0:
        raise ValueError("count must be >= 0")
    edge_range = None
    if a.min_edges is not None or a.max_edges is not None:
        edge_range = (a.min_edges or 4, a.max_edges or 8)
    scale_range = None
    if a.scale_min is not None or a.scale_max is not None:
        scale_range = (a.scale_min or 0.25, a.scale_max or max(0.6, a.scale_min or 0.25))
    specs = corpus_specs(
        a.count, a.seed, a.template, a.panel_count, edge_range, scale_range, corruption,
        edge_samples=a.edge_samples, grid_size=a.grid_size,
    )
    out = Path(a.out)
    width = max(3, len(str(max(a.count - 1, 0))))
    names = [f"{k:0{width}d}" for k in range(a.count)]
    for name, (gt_text, raw_text) in zip(names, _pmap(_synth_one, specs, a.jobs)):
        _write(out / "gt" / f"{name}.json", gt_text)
        _write(out / "raw" / f"{name}.json", raw_text)
    manifest = {
        "count": a.count,
        "seed": a.seed,
        "samples": [
            {"name": n, "template": t.to_dict(), "corruption": c.to_dict()} for n, (t, c) in zip(names, specs)
        ],
    }
    _write(out / "manifest.json", _json(manifest))
    print(f"wrote {a.count} gt/raw pairs to {out}")
    return EXIT_OK


# -- refine -------------------------------------------------------------------

def _refine_one(job):
    path, thresholds, params, rules, as_raw = job
    try:
        s = load(path)
        if as_raw:
            s = s.evolve(stage=Stage.RAW, patch_mask=None, curve_mask=None)
        if s.stage != Stage.RAW:
            return "stage", f"{path}: expected a raw structure, got stage {s.stage.value}", None
        out, log = refine(s, thresholds, params, rules)
        log_doc = log.to_dict()
        log_doc["open_panels"] = out.meta.get("open_panels", [])
        return "ok", dumps(out), _json(log_doc)
    except (ValidationError, ValueError) as exc:
        return "error", f"{path}: {exc}", None


def cmd_refine(a) -> int:
    thresholds = TopologyThresholds(
        eps_p=a.eps_p, eps_c=a.eps_c, eps_adj=a.eps_adj, dup_cd=a.dup_cd, sub_cd=a.sub_cd,
        prune_margin=a.prune_margin, brute_force_limit=a.brute_force_limit, min_loop_edges=a.min_loop_edges,
    )
    params = GeometryParams(
        tau_gap=a.tau_gap, scale_clamp=(a.scale_clamp_min, a.scale_clamp_max),
        closure_tol=a.closure_tol, brute_force_limit=a.brute_force_limit,
    )
    if a.no_refine:
        rules = RefinementRules.threshold_only()
    else:
        rules = RefinementRules(not a.no_duplicate_merge, not a.no_subcurve_removal, not a.no_loop_pruning)
    files = _input_files(a.input)
    jobs = [(p, thresholds, params, rules, a.as_raw) for p in files.values()]
    results = _pmap(_refine_one, jobs, a.jobs)
    out = Path(a.out)
    status = EXIT_OK
    for name, (kind, payload, log_text) in zip(files, results):
        if kind == "ok":
            _write(out / f"{name}.json", payload)
            _write(out / "logs" / f"{name}.json", log_text)
            continue
        print(payload, file=sys.stderr)
        status = EXIT_USAGE if kind == "stage" else max(status, EXIT_PARTIAL)
    ok = sum(r[0] == "ok" for r in results)
    print(f"refined {ok}/{len(results)} structures into {out}")
    return status


# -- eval ---------------------------------------------------------------------

def cmd_eval(a) -> int:
    cfg = MetricConfig(
        w_geo=a.w_geo, w_cls=a.w_cls, w_scale=a.w_scale, raster_resolution=a.raster_resolution,
        neg_weight=a.neg_weight, adaptive_spacing=a.adaptive_spacing, closure_tol=a.closure_tol,
        match_grid_stride=a.match_grid_stride,
    )
    for d in (a.pred, a.gt):
        _input_files(d)
    if a.jobs > 1:
        with ProcessPoolExecutor(max_workers=a.jobs) as ex:
            report = evaluate_corpus(a.pred, a.gt, cfg, ex.map)
    else:
        report = evaluate_corpus(a.pred, a.gt, cfg)
    if a.format == "json":
        text = _json(report.to_dict())
    else:
        text = format_table(report.samples + [("corpus", report.aggregate)], METRIC_COLUMNS)
    if a.out:
        _write(Path(a.out), text)
    else:
        sys.stdout.write(text)
    for name in report.missing:
        print(f"unpaired sample skipped: {name}", file=sys.stderr)
    return EXIT_PARTIAL if report.missing else EXIT_OK


# -- render / triangulate -----------------------------------------------------

def _render_one(path):
    from .export import svg_document

    return svg_document(load(path))


def cmd_render(a) -> int:
    files = _input_files(a.input)
    out = Path(a.out)
    for name, svg in zip(files, _pmap(_render_one, list(files.values()), a.jobs)):
        _write(out / f"{name}.svg", svg)
    print(f"rendered {len(files)} structures into {out}")
    return EXIT_OK


def _triangulate_one(job):
    from .export import obj_document

    path, closure_tol = job
    s = load(path)
    tris, status = {}, {}
    for pn in s.valid_panels():
        try:
            tris[pn.patch_id] = triangulate_panel(pn, closure_tol)
            status[str(pn.patch_id)] = {"ok": True, "triangles": int(len(tris[pn.patch_id].triangles))}
        except ValueError as exc:
            status[str(pn.patch_id)] = {"ok": False, "reason": f"{type(exc).__name__}: {exc}"}
    return obj_document(s, tris), status


def cmd_triangulate(a) -> int:
    files = _input_files(a.input)
    out = Path(a.out)
    jobs = [(p, a.closure_tol) for p in files.values()]
    report, failed, total = {}, [], 0
    for name, (obj, status) in zip(files, _pmap(_triangulate_one, jobs, a.jobs)):
        _write(out / f"{name}.obj", obj)
        report[name] = status
        for pid, st in status.items():
            total += 1
            if not st["ok"]:
                failed.append((name, pid, st["reason"]))
    _write(out / "triangulation.json", _json(report))
    for name, pid, reason in failed:
        print(f"open panel {name}/{pid}: {reason}", file=sys.stderr)
    print(f"triangulated {total - len(failed)}/{total} panels")
    return EXIT_PARTIAL if failed else EXIT_OK


# -- parser -------------------------------------------------------------------

def _common(p):
    p.add_argument("--config", help="TOML or JSON file with default values (flags win)")
    p.add_argument("--jobs", type=int, default=default_jobs(),
                   help=f"worker processes (env {JOBS_ENV}, else CPU count)")


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = argparse.ArgumentParser(prog="garmentstruct", description=__doc__.splitlines()[0], formatter_class=fmt)
    sub = parser.add_subparsers(dest="command", required=True)

    t, c = TopologyThresholds(), CorruptionSpec()
    g, m = GeometryParams(), MetricConfig()

    p = sub.add_parser("synth", help="generate a paired gt/raw corpus", formatter_class=fmt)
    _common(p)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--count", type=int, default=10, help="number of samples")
    p.add_argument("--seed", type=int, default=0, help="corpus seed")
    p.add_argument("--template", action="append", choices=[x.value for x in Template],
                   help="template(s) to cycle through; repeat the flag for several (default: all)")
    p.add_argument("--panel-count", type=int, default=None, help="panels per sample (default: per-template range)")
    p.add_argument("--min-edges", type=int, default=None, help="minimum edges per panel (default: per template)")
    p.add_argument("--max-edges", type=int, default=None, help="maximum edges per panel (default: per template)")
    p.add_argument("--scale-min", type=float, default=None, help="minimum panel half-extent in metres")
    p.add_argument("--scale-max", type=float, default=None, help="maximum panel half-extent in metres")
    p.add_argument("--edge-samples", type=int, default=50, help="points per 2D edge")
    p.add_argument("--grid-size", type=int, default=20, help="patch grid resolution")
    p.add_argument("--clean", action="store_true", help="write raw copies without any corruption")
    p.add_argument("--duplicate-curve-prob", type=float, default=c.duplicate_curve_prob, help="chance a curve is duplicated")
    p.add_argument("--duplicate-jitter", type=float, default=c.duplicate_jitter, help="offset of duplicates, metres")
    p.add_argument("--subcurve-prob", type=float, default=c.subcurve_prob, help="chance a curve gets a fragment")
    p.add_argument("--spurious-edge-prob", type=float, default=c.spurious_edge_prob, help="chance of a spurious edge per panel")
    p.add_argument("--endpoint-jitter-sigma", type=float, default=c.endpoint_jitter_sigma, help="edge endpoint noise, normalized units")
    p.add_argument("--prob-noise-sigma", type=float, default=c.prob_noise_sigma, help="noise on validity probabilities")
    p.add_argument("--drop-prob", type=float, default=c.drop_prob, help="chance of a low-confidence ghost element per panel")
    p.add_argument("--no-shuffle-edges", action="store_true", help="keep the ground-truth edge order")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("refine", help="topology and geometry refinement of raw structures", formatter_class=fmt)
    _common(p)
    p.add_argument("--input", required=True, help="directory of raw structure JSON files")
    p.add_argument("--out", required=True, help="output directory (logs go to OUT/logs)")
    p.add_argument("--eps-p", type=float, default=t.eps_p, help="patch validity threshold")
    p.add_argument("--eps-c", type=float, default=t.eps_c, help="curve validity threshold")
    p.add_argument("--eps-adj", type=float, default=t.eps_adj, help="adjacency threshold")
    p.add_argument("--dup-cd", type=float, default=t.dup_cd, help="duplicate-merge Chamfer threshold")
    p.add_argument("--sub-cd", type=float, default=t.sub_cd, help="sub-curve Chamfer threshold")
    p.add_argument("--prune-margin", type=float, default=t.prune_margin, help="minimum loop-cost improvement to prune an edge")
    p.add_argument("--brute-force-limit", type=int, default=t.brute_force_limit, help="largest loop solved exactly")
    p.add_argument("--min-loop-edges", type=int, default=t.min_loop_edges, help="never prune below this many edges")
    p.add_argument("--tau-gap", type=float, default=g.tau_gap, help="bad-edge gap ratio")
    p.add_argument("--scale-clamp-min", type=float, default=g.scale_clamp[0], help="lower similarity scale clamp")
    p.add_argument("--scale-clamp-max", type=float, default=g.scale_clamp[1], help="upper similarity scale clamp")
    p.add_argument("--closure-tol", type=float, default=g.closure_tol, help="closure tolerance, normalized units")
    p.add_argument("--no-refine", action="store_true", help="thresholds only (ablation baseline)")
    p.add_argument("--no-duplicate-merge", action="store_true", help="skip duplicate-curve merging")
    p.add_argument("--no-subcurve-removal", action="store_true", help="skip sub-curve removal")
    p.add_argument("--no-loop-pruning", action="store_true", help="skip 2D loop pruning")
    p.add_argument("--as-raw", action="store_true", help="treat inputs of any stage as raw predictions")
    p.set_defaults(func=cmd_refine)

    p = sub.add_parser("eval", help="evaluate predictions against ground truth", formatter_class=fmt)
    _common(p)
    p.add_argument("--pred", required=True, help="directory of predicted structures")
    p.add_argument("--gt", required=True, help="directory of ground-truth structures")
    p.add_argument("--format", choices=("table", "json"), default="table", help="report format")
    p.add_argument("--out", default=None, help="write the report here instead of stdout")
    p.add_argument("--w-geo", type=float, default=m.w_geo, help="geometric loss weight")
    p.add_argument("--w-cls", type=float, default=m.w_cls, help="classification loss weight")
    p.add_argument("--w-scale", type=float, default=m.w_scale, help="scale loss weight")
    p.add_argument("--raster-resolution", type=int, default=m.raster_resolution, help="IoU raster size in pixels")
    p.add_argument("--neg-weight", type=float, default=m.neg_weight, help="BCE weight of negative targets")
    p.add_argument("--adaptive-spacing", type=float, default=m.adaptive_spacing, help="adaptive patch sampling spacing, metres")
    p.add_argument("--closure-tol", type=float, default=m.closure_tol, help="closure tolerance for IoU boundaries")
    p.add_argument("--match-grid-stride", type=int, default=m.match_grid_stride, help="patch subgrid stride used for matching")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("render", help="write one SVG panel layout per structure", formatter_class=fmt)
    _common(p)
    p.add_argument("--input", required=True, help="directory of structure JSON files")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("triangulate", help="triangulate panels and write OBJ meshes", formatter_class=fmt)
    _common(p)
    p.add_argument("--input", required=True, help="directory of structure JSON files")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--closure-tol", type=float, default=g.closure_tol, help="closure tolerance, normalized units")
    p.set_defaults(func=cmd_triangulate)
    return parser


def _read_config(path) -> dict:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"config file not found: {p}")
    text = p.read_text()
    try:
        if p.suffix.lower() == ".json":
            return json.loads(text)
        import tomli

        return tomli.loads(text)
    except ValueError as exc:  # JSONDecodeError and TOMLDecodeError both derive from it
        raise UsageError(f"{p}: cannot parse config ({exc})") from exc


def _config_defaults(cfg: dict, command: str, subparser) -> dict:
    """Flat keys plus an optional ``[command]`` table; dashes or underscores."""
    known = {a.dest for a in subparser._actions} - {"help", "config"}
    out = {}
    for scope in (cfg, cfg.get(command, {})):
        for key, value in scope.items():
            if isinstance(value, dict):
                continue
            dest = key.replace("-", "_")
            if dest not in known:
                raise UsageError(f"unknown config key for {command}: {key}")
            out[dest] = value
    return out


def _subparser(parser, command):
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            return action.choices[command]
    raise KeyError(command)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    try:
        if args.config:
            sp = _subparser(parser, args.command)
            sp.set_defaults(**_config_defaults(_read_config(args.config), args.command, sp))
            args = parser.parse_args(argv)
        if args.jobs < 1:
            raise UsageError("--jobs must be >= 1")
        return args.func(args)
    except (UsageError, ValidationError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
