import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import SQUARE, square_structure
from garmentstruct.geometry import refine
from garmentstruct.metrics import (
    _bce,
    METRIC_COLUMNS,
    MetricConfig,
    MetricReport,
    aggregate,
    bce_floor,
    chamfer_directional,
    chamfer_symmetric,
    compute_losses,
    evaluate,
    evaluate_corpus,
    format_table,
    hungarian_match,
    match_elements,
    match_point_sets,
    nearest_distances,
    overall_accuracy,
    pairwise_chamfer,
    polygon_iou,
    rasterize_panel_pair,
)
from garmentstruct.model import GarmentStructure, Panel, Patch3D, Stage, load, save
from garmentstruct.synth import CorruptionSpec, Template, TemplateSpec, corrupt, generate
from oracles import (
    brute_assignment_cost,
    brute_chamfer_directional,
    brute_chamfer_symmetric,
    brute_nearest,
)

SQ = np.array(SQUARE)


# -- Chamfer ------------------------------------------------------------------

def test_chamfer_hand_values():
    assert chamfer_directional([[0.0, 0.0]], [[3.0, 4.0]]) == 5.0
    a = np.random.default_rng(0).normal(size=(30, 3))
    assert chamfer_directional(a, a) == 0.0 and chamfer_symmetric(a, a) == 0.0


def test_chamfer_rejects_empty_and_mixed_dims():
    with pytest.raises(ValueError):
        chamfer_directional(np.zeros((0, 2)), [[0.0, 0.0]])
    with pytest.raises(ValueError):
        chamfer_directional([[0.0, 0.0]], [[0.0, 0.0, 0.0]])


def test_chamfer_equals_oracle_exactly():
    rng = np.random.default_rng(1)
    for _ in range(100):
        dim = int(rng.choice([2, 3]))
        a = rng.normal(size=(int(rng.integers(1, 201)), dim))
        b = rng.normal(size=(int(rng.integers(1, 201)), dim))
        assert chamfer_directional(a, b) == brute_chamfer_directional(a, b)
        assert chamfer_symmetric(a, b) == brute_chamfer_symmetric(a, b)


def test_tree_path_equals_oracle_exactly():
    # large enough to take the KD-tree path
    rng = np.random.default_rng(2)
    a, b = rng.normal(size=(400, 3)), rng.normal(size=(300, 3))
    assert nearest_distances(a, b).tolist() == brute_nearest(a, b)


@given(st.integers(0, 2**32 - 1), st.floats(-100, 100), st.floats(-100, 100))
def test_chamfer_symmetric_and_translation_invariant(seed, tx, ty):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=(20, 2)), rng.normal(size=(15, 2))
    assert chamfer_symmetric(a, b) == chamfer_symmetric(b, a)
    t = np.array([tx, ty])
    assert chamfer_symmetric(a + t, b + t) == pytest.approx(chamfer_symmetric(a, b), rel=1e-9, abs=1e-9)


def test_pairwise_chamfer_matches_single_calls():
    rng = np.random.default_rng(3)
    A = [rng.normal(size=(int(rng.integers(1, 30)), 3)) for _ in range(5)]
    B = [rng.normal(size=(int(rng.integers(1, 30)), 3)) for _ in range(4)]
    mask = rng.random((5, 4)) < 0.7
    ab, ba = pairwise_chamfer(A, B, mask)
    for i in range(5):
        for j in range(4):
            if mask[i, j]:
                # batched path: same values up to summation order
                assert ab[i, j] == pytest.approx(brute_chamfer_directional(A[i], B[j]), rel=1e-12)
                assert ba[i, j] == pytest.approx(brute_chamfer_directional(B[j], A[i]), rel=1e-12)
            else:
                assert math.isnan(ab[i, j])


# -- Hungarian ---------------------------------------------------------------------

def test_diagonal_preferred():
    cost = np.ones((4, 4)) - np.eye(4)
    m = hungarian_match(cost)
    assert m.pairs == ((0, 0), (1, 1), (2, 2), (3, 3)) and m.total_cost == 0.0


def test_single_entry():
    m = hungarian_match([[2.5]])
    assert m.pairs == ((0, 0),) and m.total_cost == 2.5


def test_hungarian_equals_permutation_oracle():
    rng = np.random.default_rng(4)
    for r in range(1, 7):
        for c in range(1, 7):
            for _ in range(3):
                cost = rng.random((r, c))
                m = hungarian_match(cost)
                assert len(m.pairs) == min(r, c)
                assert len(m.unmatched_pred) == r - len(m.pairs)
                assert len(m.unmatched_gt) == c - len(m.pairs)
                assert m.total_cost == pytest.approx(brute_assignment_cost(cost.tolist()), abs=1e-12)
                assert m.total_cost == math.fsum(cost[i, j] for i, j in m.pairs)


def test_hungarian_rejects_negative_costs():
    with pytest.raises(ValueError):
        hungarian_match([[-1.0]])


@given(st.integers(0, 2**32 - 1))
def test_lazy_matching_agrees_with_full_matrix(seed):
    rng = np.random.default_rng(seed)
    na, nb = int(rng.integers(1, 9)), int(rng.integers(1, 9))
    A = [rng.normal(size=(10, 3)) * 0.1 + rng.normal(size=3) for _ in range(na)]
    B = [rng.normal(size=(10, 3)) * 0.1 + rng.normal(size=3) for _ in range(nb)]
    full = np.array([[brute_chamfer_symmetric(a, b) for b in B] for a in A])
    lazy = match_point_sets(A, B, seed_k=1)
    assert lazy.total_cost == pytest.approx(brute_assignment_cost(full.tolist()), rel=1e-12, abs=1e-15)


# -- element matching ------------------------------------------------------------

def two_panel_tube():
    return generate(TemplateSpec(Template.TUBE, panel_count=2, seed=5))


def test_identity_matching(square):
    patches, curves, panels = match_elements(square, square)
    assert patches.pairs == ((0, 0),) and patches.total_cost == 0.0
    assert curves.pairs == tuple((j, j) for j in range(4)) and curves.total_cost == 0.0
    assert panels.pairs == ((0, 0),)


def test_spurious_patch_left_unmatched(square):
    extra = Patch3D(9, square.patches[0].grid + 5.0)
    pred = GarmentStructure(square.curves, list(square.patches) + [extra], np.vstack([square.connectivity, np.zeros(4)]),
                            square.panels, Stage.GROUND_TRUTH)
    patches, _, panels = match_elements(pred, square)
    assert patches.pairs == ((0, 0),) and patches.unmatched_pred == (1,)
    assert panels.unmatched_pred == ()


def permuted(s, rng):
    """Same structure with patches, curves and panels listed in another order."""
    pp, cp = rng.permutation(s.n_patches), rng.permutation(s.n_curves)
    panels = [s.panels[k] for k in rng.permutation(len(s.panels))]
    return s.evolve(
        patches=tuple(s.patches[i] for i in pp),
        curves=tuple(s.curves[j] for j in cp),
        connectivity=s.connectivity[np.ix_(pp, cp)],
        panels=tuple(panels),
        patch_mask=None if s.patch_mask is None else s.patch_mask[pp],
        curve_mask=None if s.curve_mask is None else s.curve_mask[cp],
    ), pp, cp


def test_shuffled_copy_recovers_permutation():
    gt = generate(TemplateSpec(Template.TUBE, panel_count=4, seed=3))
    pred, pp, cp = permuted(gt, np.random.default_rng(0))
    patches, curves, _ = match_elements(pred, gt)
    assert dict(patches.pairs) == {k: int(i) for k, i in enumerate(pp)}
    assert dict(curves.pairs) == {k: int(j) for k, j in enumerate(cp)}


def test_metrics_invariant_under_element_order():

    gt = generate(TemplateSpec(Template.TRAPEZOID, panel_count=3, seed=4))
    pred, _ = refine(corrupt(gt, CorruptionSpec(seed=2)))
    base = evaluate(pred, gt)
    rng = np.random.default_rng(1)
    for _ in range(3):
        a, _, _ = permuted(pred, rng)
        b, _, _ = permuted(gt, rng)
        r = evaluate(a, b)
        for name in METRIC_COLUMNS + ("loss_geo", "loss_cls", "loss_scale", "loss_total"):
            x, y = getattr(base, name), getattr(r, name)
            assert (x is None) == (y is None)
            if x is not None:
                assert y == pytest.approx(x, rel=1e-9, abs=1e-9), name


# -- IoU ------------------------------------------------------------------------

def test_iou_identical_and_disjoint():
    assert polygon_iou(SQ, SQ) == 1.0
    assert polygon_iou(SQ, SQ + [5.0, 0.0]) == 0.0


def test_iou_half_shift():
    # overlap 2 of union 6 for side-2 squares shifted by one unit
    assert polygon_iou(SQ, SQ + [1.0, 0.0]) == pytest.approx(1 / 3, abs=0.02)


@given(st.floats(-0.9, 0.9), st.floats(-0.9, 0.9), st.floats(0, 2 * np.pi), st.floats(-50, 50), st.floats(-50, 50))
def test_iou_symmetric_and_rigid_invariant(dx, dy, angle, tx, ty):
    tri = np.array([[-1.0, -0.5], [1.2, -0.7], [0.1, 1.0]])
    a, b = SQ, tri + [dx, dy]
    base = polygon_iou(a, b)
    assert polygon_iou(b, a) == pytest.approx(base, abs=0.02)
    R = np.array([[np.cos(angle), -np.sin(angle)], [np.sin(angle), np.cos(angle)]])
    t = np.array([tx, ty])
    assert polygon_iou(a @ R.T + t, b @ R.T + t) == pytest.approx(base, abs=0.02)


def test_iou_uses_metric_scale(square):
    big = Panel(0, square.panels[0].edges, 1.0)
    small = Panel(0, square.panels[0].edges, 0.5)
    assert rasterize_panel_pair(big, small) == pytest.approx(0.25, abs=0.02)


def test_iou_refuses_open_boundary(square):
    edges = list(square.panels[0].edges)
    edges[0] = edges[0].with_points(edges[0].points + 0.1)
    with pytest.raises(ValueError):
        rasterize_panel_pair(Panel(0, edges, 1.0), square.panels[0])


# -- losses -------------------------------------------------------------------------

def test_scale_loss_hand_value():
    pred, gt = square_structure(scale=0.5), square_structure(scale=0.4)
    lg, lc, ls, lt = compute_losses(pred, gt, match_elements(pred, gt), MetricConfig(w_scale=0.01))
    assert ls == pytest.approx(1e-4, rel=1e-12)
    assert lg == 0.0
    assert lt == pytest.approx(lg + lc + ls, rel=1e-15)


def test_perfect_prediction_hits_bce_floor(square):
    lg, lc, ls, lt = compute_losses(square, square, match_elements(square, square))
    n_terms = 1 + 4 + 4
    assert lg == 0.0 and ls == 0.0
    assert lc == pytest.approx(bce_floor(n_terms), rel=1e-12)


def test_losses_linear_in_weights():

    gt = generate(TemplateSpec(Template.RECT, panel_count=2, seed=8))
    pred, _ = refine(corrupt(gt, CorruptionSpec(seed=8)))
    m = match_elements(pred, gt)
    base = compute_losses(pred, gt, m, MetricConfig())
    double = compute_losses(pred, gt, m, MetricConfig(w_geo=600.0))
    assert base[0] > 0
    assert double[0] == 2 * base[0]
    assert double[1:3] == base[1:3]
    cls2 = compute_losses(pred, gt, m, MetricConfig(w_cls=3.0))
    assert cls2[1] == pytest.approx(3 * base[1], rel=1e-12)


def test_probability_out_of_range_rejected(square):
    with pytest.raises(ValueError):
        _bce([1.5], [1.0], 1.0)


# -- evaluate -------------------------------------------------------------------------

def test_perfect_report(square):
    r = evaluate(square, square)
    assert r.acc_p == r.acc_e == r.acc_o == r.iou == 1.0
    assert r.cd_e == r.cd_p_base == r.cd_p_adapt == r.cd_c == 0.0
    assert r.loss_geo == r.loss_scale == 0.0


def test_deleted_panel():
    gt = two_panel_tube()
    keep = [c.id in gt.panels[0].curve_ids for c in gt.curves]
    pred = GarmentStructure(
        [c for c, k in zip(gt.curves, keep) if k],
        gt.patches[:1],
        gt.connectivity[:1, keep],
        gt.panels[:1],
        Stage.GROUND_TRUTH,
    )
    r = evaluate(pred, gt)
    assert r.acc_p == 0.0 and r.acc_e is None and r.acc_o == 0.0
    # the remaining panel still matches perfectly
    assert r.counts["cd_p_base"] == 1 and r.cd_p_base == 0.0
    assert r.counts["cd_c"] == sum(keep) and r.cd_c == 0.0
    assert r.cd_e == 0.0 and r.iou == 1.0


def test_edge_count_mismatch_lowers_acc_e():
    gt = two_panel_tube()
    pn = gt.panels[0]
    edges = list(pn.edges)
    merged = edges[1].with_points(np.concatenate([edges[1].points, edges[2].points[1:]]))
    pred_panel = Panel(pn.patch_id, [edges[0], merged] + edges[3:], pn.scale)
    pred = gt.evolve(panels=(pred_panel,) + gt.panels[1:])
    r = evaluate(pred, gt)
    assert r.acc_p == 1.0 and r.acc_e == 0.5 and r.acc_o == 0.5


def test_overall_accuracy_rules():
    assert overall_accuracy(0.9210, 0.7175) == pytest.approx(0.6608, abs=5e-4)
    assert overall_accuracy(0.0, None) == 0.0
    assert overall_accuracy(None, None) is None


# -- corpus -------------------------------------------------------------------------

@pytest.fixture
def corpus_dir(tmp_path):
    gt_dir = tmp_path / "gt"
    gt_dir.mkdir()
    for k, t in enumerate([Template.RECT, Template.TUBE, Template.ARC_HEM_SKIRT]):
        save(generate(TemplateSpec(t, panel_count=2, seed=k)), gt_dir / f"{k:03d}.json")
    return gt_dir


def test_corpus_of_identical_pairs(corpus_dir):
    rep = evaluate_corpus(corpus_dir, corpus_dir)
    a = rep.aggregate
    assert a.sample_count == 3 and rep.missing == []
    assert a.acc_p == a.acc_e == a.acc_o == a.iou == 1.0
    assert a.cd_e == a.cd_p_base == a.cd_c == 0.0
    assert [n for n, _ in rep.samples] == ["000", "001", "002"]


def test_aggregate_acc_o_is_product():
    reports = [MetricReport(acc_p=1.0, acc_e=0.5), MetricReport(acc_p=0.0, acc_e=None), MetricReport(acc_p=1.0, acc_e=0.75)]
    agg = aggregate(reports)
    assert agg.acc_p == pytest.approx(2 / 3) and agg.acc_e == pytest.approx(0.625)
    assert abs(agg.acc_o - agg.acc_p * agg.acc_e) <= 1e-9


def test_single_sample_corpus_equals_evaluate(tmp_path):

    gt = generate(TemplateSpec(Template.TRAPEZOID, panel_count=2, seed=1))
    pred, _ = refine(corrupt(gt, CorruptionSpec(seed=1)))
    for d, s in (("p", pred), ("g", gt)):
        (tmp_path / d).mkdir()
        save(s, tmp_path / d / "x.json")
    direct = evaluate(load(tmp_path / "p" / "x.json"), load(tmp_path / "g" / "x.json"))
    rep = evaluate_corpus(tmp_path / "p", tmp_path / "g")
    for name in METRIC_COLUMNS:
        assert getattr(rep.aggregate, name) == getattr(direct, name)


def test_missing_pairs_listed(corpus_dir, tmp_path):
    pred = tmp_path / "pred"
    pred.mkdir()
    (pred / "000.json").write_text((corpus_dir / "000.json").read_text())
    rep = evaluate_corpus(pred, corpus_dir)
    assert rep.missing == ["001", "002"] and len(rep.samples) == 1


def test_table_has_the_metric_columns():
    text = format_table([("all", MetricReport(acc_p=1.0))])
    header = text.splitlines()[0].split()
    assert header[1:] == list(METRIC_COLUMNS) and len(METRIC_COLUMNS) == 8
    assert "-" in text.splitlines()[2]
