import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from signpose.detector import Detection
from signpose.evalkit import (
    FP, IGNORE, TP, EvalConfig, average_precision, average_vertex_error, evaluate, map_at, map_vs_iou_sweep,
    match_detections, sweep_to_csv,
)
from signpose.templates import GroundTruthSign

from oracles import ap_ref, greedy_eval_ref


def _sq(l, t, r, b):
    return np.array([[l, t], [r, t], [r, b], [l, b]], float)


def _gt(shape, l, t, r, b, difficult=False):
    return GroundTruthSign.from_quad(shape, _sq(l, t, r, b), difficult)


def _det(shape, score, l, t, r, b):
    return Detection.from_quad(shape, score, _sq(l, t, r, b))


def test_matching_examples():
    g = [_gt("rectangle", 0, 0, 10, 10), _gt("diamond", 20, 20, 30, 30)]
    perfect = [_det(x.shape, 0.9, *x.bbox) for x in g]
    m = match_detections(perfect, g, 0.5)
    assert m.labels == [TP, TP] and m.fn == 0
    assert match_detections([_det("rectangle", 0.9, 0, 0, 1, 1)], [], 0.5).labels == [FP]
    two = [_det("rectangle", 0.6, 0, 0, 10, 10), _det("rectangle", 0.9, 0, 0, 10, 9)]
    m = match_detections(two, g[:1], 0.5)
    assert m.labels == [TP, FP] and m.dets[0].score == 0.9


def test_difficult_and_small_are_ignored():
    g = [_gt("rectangle", 0, 0, 10, 10, difficult=True), _gt("rectangle", 50, 50, 55, 55)]
    dets = [_det("rectangle", 0.9, 0, 0, 10, 10), _det("rectangle", 0.8, 50, 50, 55, 55)]
    m = match_detections(dets, g, 0.5, EvalConfig(min_side_px=13), image_width=1280)
    assert m.labels == [IGNORE, IGNORE] and m.n_gt == {} and m.fn == 0
    # at half the reference width, a 7 px side counts as 14 px
    m = match_detections(dets[1:], g[1:], 0.5, EvalConfig(min_side_px=13), image_width=640)
    assert m.labels == [IGNORE]
    g2 = [_gt("rectangle", 50, 50, 57, 57)]
    m = match_detections([_det("rectangle", 0.8, 50, 50, 57, 57)], g2, 0.5, EvalConfig(min_side_px=13), 640)
    assert m.labels == [TP]


def test_ap_examples():
    assert average_precision([TP], 1) == 1.0
    assert average_precision([FP, TP], 1) == 0.5
    assert average_precision([], 0) is None
    assert average_precision([FP], 0) == 0.0
    assert average_precision([], 3) == 0.0


def test_ap_against_brute_force(rng):
    for _ in range(300):
        n = int(rng.integers(1, 11))
        labels = list(rng.choice([TP, FP, IGNORE], n, p=[0.5, 0.4, 0.1]))
        n_gt = labels.count(TP) + int(rng.integers(0, 3))
        if n_gt == 0:
            continue
        assert abs(average_precision(labels, n_gt) - ap_ref(labels, n_gt)) < 1e-10


def _random_scene(rng, n_gt=5, n_det=20):
    shapes = ["rectangle", "diamond"]
    gts, g_items = [], []
    for _ in range(int(rng.integers(0, n_gt + 1))):
        l, t = rng.uniform(0, 80, 2)
        w, h = rng.uniform(8, 30, 2)
        s = str(rng.choice(shapes))
        gts.append(_gt(s, l, t, l + w, t + h))
        g_items.append((s, (l, t, l + w, t + h)))
    dets, d_items = [], []
    for _ in range(int(rng.integers(0, n_det + 1))):
        if g_items and rng.random() < 0.6:
            s, (l, t, r, b) = g_items[int(rng.integers(len(g_items)))]
            j = rng.uniform(-3, 3, 4)
            l, t, r, b = l + j[0], t + j[1], r + j[2], b + j[3]
        else:
            l, t = rng.uniform(0, 80, 2)
            r, b = l + rng.uniform(8, 30), t + rng.uniform(8, 30)
            s = str(rng.choice(shapes))
        sc = float(rng.uniform(0.5, 1.0))
        dets.append(_det(s, sc, l, t, r, b))
        d_items.append((s, sc, (l, t, r, b)))
    return dets, gts, d_items, g_items


def test_matching_and_ap_against_oracle(rng):
    for _ in range(100):
        dets, gts, d_items, g_items = _random_scene(rng)
        for thr in (0.5, 0.75):
            m = match_detections(dets, gts, thr)
            assert m.labels == greedy_eval_ref(d_items, g_items, thr)
            assert m.labels.count(TP) + m.fn == len(gts)
            assert len(m.labels) == len(dets)
            for s in ("rectangle", "diamond"):
                labs = [lab for d, lab in zip(m.dets, m.labels) if d.shape == s]
                n = sum(1 for g in gts if g.shape == s)
                got = average_precision(labs, n)
                if n:
                    assert abs(got - ap_ref(labs, n)) < 1e-10


def test_ap_invariant_to_monotone_score_rescaling(rng):
    dets, gts, *_ = _random_scene(rng, 5, 15)
    base = map_at([(dets, gts)], 0.5)
    rescaled = [Detection(d.shape, d.score ** 3 * 0.5, d.quad, d.boundary, d.bbox) for d in dets]
    assert map_at([(rescaled, gts)], 0.5) == base


def test_sweep_monotone_and_consistent(rng):
    for _ in range(20):
        images = [_random_scene(rng)[:2] for _ in range(3)]
        rows = map_vs_iou_sweep(images)
        vals = [r["mAP"] for r in rows if r["mAP"] is not None]
        assert all(a >= b - 1e-12 for a, b in zip(vals, vals[1:]))
        for r in rows:
            assert r["mAP"] == map_at(images, r["iou"])[0]


def test_shrunk_detections_curve():
    gts = [_gt("rectangle", 0, 0, 100, 100)]
    dets = [_det("rectangle", 0.9, 5, 5, 95, 95)]  # IoU 0.81
    rows = map_vs_iou_sweep([(dets, gts)])
    assert [r["mAP"] for r in rows] == [1.0] * 7 + [0.0] * 3
    csv_text = sweep_to_csv(rows)
    assert csv_text.splitlines()[0] == "iou,mAP,ap_rectangle,ap_diamond,ap_octagon"
    assert len(csv_text.splitlines()) == 11


def test_ave_examples():
    g = _gt("octagon", 0, 0, 10, 10)
    d = Detection.from_quad("octagon", 0.9, g.template_vertices)
    assert average_vertex_error([(d, g)]) == 0.0
    d2 = Detection.from_quad("octagon", 0.9, g.template_vertices + [3, 4])
    assert average_vertex_error([(d2, g)]) == pytest.approx(5.0, abs=1e-12)
    r = _gt("rectangle", 0, 0, 10, 20)
    dr = Detection.from_quad("rectangle", 0.9, r.template_vertices)
    assert average_vertex_error([(dr, r)], "bbox_corners") == 0.0
    assert average_vertex_error([]) is None


@settings(max_examples=50, deadline=None)
@given(st.floats(-100, 100), st.floats(-100, 100))
def test_ave_translation_equivariance(vx, vy):
    g = _gt("diamond", 0, 0, 20, 10)
    d = Detection.from_quad("diamond", 0.9, g.template_vertices + [1.0, -2.0])
    base = average_vertex_error([(d, g)])
    v = np.array([vx, vy])
    gs = GroundTruthSign(g.shape, g.boundary + v, g.template_vertices + v)
    assert average_vertex_error([(d.transformed(offset=v), gs)]) == pytest.approx(base, abs=1e-9)


def test_evaluate_report_perfect():
    gts = [_gt("rectangle", 0, 0, 10, 10), _gt("octagon", 20, 20, 40, 40)]
    dets = [Detection.from_quad(g.shape, 0.99, g.template_vertices) for g in gts]
    rep = evaluate([(dets, gts)])
    assert all(v == 1.0 for v in rep["mAP"].values())
    assert rep["ave"] == 0.0
    assert rep["shapes"]["diamond"]["ap"]["0.50"] is None
    assert rep["shapes"]["rectangle"]["precision"] == 1.0
