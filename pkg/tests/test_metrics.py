import json
import random
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from link_avvp.metrics import (FIELDS, EventInterval, MetricsReport, evaluate, event_f1, extract_events,
                               match_events, rasterize, segment_f1, temporal_iou)
from link_avvp.predictor import Prediction

import brute_force


def column(cells, T=10):
    g = np.zeros((T, 1), np.uint8)
    g[list(cells), 0] = 1
    return g


def grids(T, C):
    return st.lists(st.lists(st.integers(0, 1), min_size=C, max_size=C), min_size=T, max_size=T).map(
        lambda rows: np.array(rows, np.uint8))


def random_corpus(rng, n, T, C):
    out = []
    for _ in range(n):
        p_a, p_v = rng.uniform(0, 1, (2, T, C))
        gt_a, gt_v = rng.integers(0, 2, (2, T, C)).astype(np.uint8)
        out.append((p_a, p_v, p_a * p_v, gt_a, gt_v))
    return out


def package_score(corpus):
    pairs = [(Prediction(pa, pv, pav, np.maximum(pa.max(0), pv.max(0))),
              SimpleNamespace(id=f"v{i}", audio_gt=ga, visual_gt=gv))
             for i, (pa, pv, pav, ga, gv) in enumerate(corpus)]
    return evaluate(pairs)


# ---------------------------------------------------------------- extraction

def test_extract_examples():
    assert extract_events(column([])) == []
    assert [(e.start, e.end) for e in extract_events(column([1, 2, 3, 7]))] == [(1, 4), (7, 8)]
    assert [(e.start, e.end) for e in extract_events(column(range(10)))] == [(0, 10)]


def test_extract_sorted_by_class_then_start():
    g = np.zeros((6, 2), np.uint8)
    g[[0, 4], 1] = 1
    g[2:4, 0] = 1
    assert [(e.cls, e.start) for e in extract_events(g)] == [(0, 2), (1, 0), (1, 4)]


def test_interval_rejects_empty():
    with pytest.raises(ValueError):
        EventInterval(0, 3, 3)


@settings(max_examples=100)
@given(st.integers(1, 8).flatmap(lambda T: st.integers(1, 4).flatmap(lambda C: grids(T, C))))
def test_rasterize_inverts_extract(grid):
    events = extract_events(grid)
    np.testing.assert_array_equal(rasterize(events, *grid.shape), grid)
    # runs are maximal: no two events of one class touch
    for a, b in zip(events, events[1:]):
        if a.cls == b.cls:
            assert b.start > a.end


# ---------------------------------------------------------------- segment F

def test_segment_f1_examples():
    gt = column([0, 1, 2])
    assert segment_f1(column([0, 1, 5]), gt) == pytest.approx(2 / 3)   # TP 2, FP 1, FN 1
    assert segment_f1(gt, gt) == 1.0
    assert segment_f1(column([]), column([])) == 1.0
    assert segment_f1(column([]), gt) == 0.0
    assert segment_f1(column([4]), column([])) == 0.0


def test_segment_f1_rejects_shape_mismatch():
    with pytest.raises(ValueError):
        segment_f1(np.zeros((3, 2)), np.zeros((2, 3)))


@settings(max_examples=100)
@given(st.integers(0, 2**32 - 1))
def test_segment_f1_bounds_and_symmetry(seed):
    rng = np.random.default_rng(seed)
    p, g = rng.integers(0, 2, (2, 5, 3))
    v = segment_f1(p, g)
    assert 0.0 <= v <= 1.0
    assert v == segment_f1(g, p)


# ---------------------------------------------------------------- event F

def test_iou_examples():
    a = EventInterval(0, 0, 5)
    assert temporal_iou(a, EventInterval(0, 0, 10)) == 0.5
    assert temporal_iou(a, EventInterval(0, 5, 8)) == 0.0
    assert temporal_iou(a, a) == 1.0


def test_half_overlap_counts_as_match():
    assert event_f1([EventInterval(0, 0, 5)], [EventInterval(0, 0, 10)]) == 1.0
    assert event_f1([EventInterval(0, 0, 4)], [EventInterval(0, 0, 10)]) == 0.0


def test_class_mismatch_never_matches():
    assert event_f1([EventInterval(1, 0, 5)], [EventInterval(0, 0, 5)]) == 0.0


def test_event_f1_empty_cases():
    assert event_f1([], []) == 1.0
    assert event_f1([], [EventInterval(0, 0, 1)]) == 0.0


def test_matching_is_one_to_one():
    gt = [EventInterval(0, 0, 4)]
    pred = [EventInterval(0, 0, 4), EventInterval(0, 0, 3)]
    assert match_events(pred, gt) == [(0, 0)]
    assert event_f1(pred, gt) == pytest.approx(2 / 3)


def test_greedy_prefers_highest_iou():
    gt = [EventInterval(0, 0, 4), EventInterval(0, 4, 6)]
    pred = [EventInterval(0, 1, 5), EventInterval(0, 0, 4)]
    # pred 1 is exact for gt 0; pred 0 then has nothing left above threshold
    assert match_events(pred, gt) == [(1, 0)]


@settings(max_examples=60)
@given(st.integers(0, 2**32 - 1))
def test_event_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    p, g = rng.integers(0, 2, (2, 6, 3))
    tp = len(match_events(extract_events(p), extract_events(g)))
    assert tp == brute_force.evt_counts(p, g, 6, 3)[0]


def test_adding_a_matching_prediction_does_not_lower_f1():
    rng = np.random.default_rng(2)
    for _ in range(50):
        g = rng.integers(0, 2, (8, 2))
        gt = extract_events(g)
        pred = extract_events(rng.integers(0, 2, (8, 2)))
        before = event_f1(pred, gt)
        matched = {j for _, j in match_events(pred, gt)}
        spare = [e for j, e in enumerate(gt) if j not in matched]
        if spare:
            assert event_f1(pred + [spare[0]], gt) >= before


# ---------------------------------------------------------------- corpus scores

def test_type_is_mean_of_components():
    rep = package_score(random_corpus(np.random.default_rng(0), 4, 5, 3))
    # per-video Type is the mean, so the corpus Type equals the mean of the means
    assert rep.seg_type == pytest.approx((rep.seg_a + rep.seg_v + rep.seg_av) / 3, abs=1e-15)
    assert rep.evt_type == pytest.approx((rep.evt_a + rep.evt_v + rep.evt_av) / 3, abs=1e-15)


def test_perfect_predictor_scores_one():
    rng = np.random.default_rng(4)
    corpus = []
    for _ in range(5):
        ga, gv = rng.integers(0, 2, (2, 6, 3)).astype(np.uint8)
        corpus.append((ga.astype(float), gv.astype(float), (ga & gv).astype(float), ga, gv))
    assert all(v == 1.0 for v in package_score(corpus).to_dict().values())


def test_av_uses_and_of_ground_truths():
    ga = np.array([[1], [1], [0]], np.uint8)
    gv = np.array([[1], [0], [0]], np.uint8)
    pav = np.array([[1.0], [0.0], [0.0]])
    rep = package_score([(ga.astype(float), gv.astype(float), pav, ga, gv)])
    assert rep.seg_av == 1.0 and rep.evt_av == 1.0


def test_event_at_av_pools_counts():
    # audio: 1 TP; visual: 1 FP over an empty truth. Pooled F = 2/(2+1) rather than mean(1, 0)
    ga = np.array([[1], [0]], np.uint8)
    gv = np.zeros((2, 1), np.uint8)
    pv = np.array([[0.0], [1.0]])
    rep = package_score([(ga.astype(float), pv, np.zeros((2, 1)), ga, gv)])
    assert rep.seg_event == pytest.approx(2 / 3)
    assert rep.evt_event == pytest.approx(2 / 3)


def test_corpus_mean_is_order_invariant():
    corpus = random_corpus(np.random.default_rng(9), 12, 6, 3)
    base = package_score(corpus)
    shuffled = list(corpus)
    random.Random(1).shuffle(shuffled)
    assert package_score(shuffled) == base


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_all_scores_match_brute_force(seed):
    corpus = random_corpus(np.random.default_rng(seed), 3, 4, 2)
    assert package_score(corpus).to_dict() == brute_force.score(corpus)


def test_empty_corpus_rejected():
    with pytest.raises(ValueError):
        evaluate([])


def test_report_serialisations(tmp_path):
    rep = package_score(random_corpus(np.random.default_rng(3), 3, 4, 2))
    assert list(json.loads(rep.to_json())) == list(FIELDS)
    rep.write_csv(tmp_path / "m.csv")
    header, values = (tmp_path / "m.csv").read_text().splitlines()
    assert header.split(",") == list(FIELDS)
    assert MetricsReport(**dict(zip(FIELDS, map(float, values.split(","))))) == rep
