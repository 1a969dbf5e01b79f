import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from jointscene.annotations import AnnotationTrack
from jointscene.features import labels_from_annotation
from jointscene.metrics import (EvalReport, SegmentAccumulator, asc_majority_vote, binarize,
                                cross_fold_report, events_from_frames, format_table,
                                segment_metrics)
from oracles import brute_force_segments, majority_vote

CLASSES = ["a", "b", "c", "d", "e"]


def random_events(rng, n_max=8, duration=30.0, classes=CLASSES):
    events = []
    for _ in range(int(rng.integers(0, n_max + 1))):
        on = float(rng.uniform(0, duration - 0.05))
        off = min(duration, on + float(rng.uniform(0.05, 6.0)))
        events.append((on, off, classes[int(rng.integers(len(classes)))]))
    return events


def assert_matches_oracle(ref, est, duration):
    m = segment_metrics(ref, est, duration_s=duration, labels=CLASSES)
    o = brute_force_segments(ref, est, duration)
    c = m.counts
    assert (c.n_ref, c.n_sys, c.tp, c.fp, c.fn) == (o["Nref"], o["Nsys"], o["TP"], o["FP"], o["FN"])
    assert (c.substitutions, c.deletions, c.insertions) == (o["S"], o["D"], o["I"])
    assert (m.f1, m.precision, m.recall) == (o["F1"], o["P"], o["R"])
    assert m.error_rate == o["ER"] or (math.isnan(m.error_rate) and math.isnan(o["ER"]))


# -- thresholding and voting

def test_binarize_rules():
    assert np.all(binarize(np.full((3, 4), 0.5)) == 0)
    assert np.all(binarize(np.random.default_rng(0).random((3, 4)), 0.0) == 1)
    assert binarize(np.array([0.9]))[0] == 1


def test_majority_vote_examples():
    b = np.zeros((10, 4), dtype=np.uint8)
    b[:6, 3] = 1
    b[6:9, 1] = 1
    assert asc_majority_vote(b) == 3
    tie = np.zeros((4, 3), dtype=np.uint8)
    tie[:2, 2] = 1
    tie[2:, 1] = 1
    assert asc_majority_vote(tie) == 1


def test_majority_vote_falls_back_to_mean_score():
    scores = np.array([[0.2, 0.5, 0.4], [0.3, 0.6, 0.8]])
    assert asc_majority_vote(binarize(scores), scores) == 2
    assert asc_majority_vote(binarize(scores)) == 0


def test_majority_vote_matches_counting_oracle(rng):
    for _ in range(200):
        scores = rng.random((int(rng.integers(1, 40)), int(rng.integers(1, 11))))
        b = binarize(scores, float(rng.uniform(0.3, 1.0)))
        assert asc_majority_vote(b, scores) == majority_vote(b.tolist(), scores.tolist())


def test_majority_vote_invariant_under_monotone_transform(rng):
    for _ in range(50):
        scores = rng.random((30, 5))
        thr = 0.7
        a = asc_majority_vote(binarize(scores, thr), scores)
        b = asc_majority_vote(binarize(np.exp(3 * scores), math.exp(3 * thr)), np.exp(3 * scores))
        assert a == b


# -- frames to events

def test_events_from_frames_examples():
    assert events_from_frames(np.zeros((20, 3)), 0.1) == []
    b = np.zeros((30, 2))
    b[10:21, 1] = 1
    b[25, 0] = 1
    hop = 512 / 22050
    events = events_from_frames(b, hop)
    assert events == [(10 * hop, 21 * hop, 1), (25 * hop, 26 * hop, 0)]


def test_events_from_frames_round_trip_fixed_point(desk, rng):
    hop = 512 / 22050
    for _ in range(20):
        b = (rng.random((60, desk.n_events)) < 0.2).astype(np.uint8)
        events = [(on, off, desk.event_classes[c]) for on, off, c in events_from_frames(b, hop)]
        track = AnnotationTrack("harbour", events)
        y = labels_from_annotation(track, 60, hop, desk)
        assert np.array_equal(y[:, desk.n_scenes:desk.n_scenes + desk.n_events], b)


# -- segment metrics

def test_perfect_prediction():
    ref = [(0.0, 3.5, "a"), (2.0, 9.0, "b")]
    m = segment_metrics(ref, ref, duration_s=10.0)
    assert m.error_rate == 0.0 and m.f1 == 1.0


def test_all_deletions():
    m = segment_metrics([(0.0, 10.0, "a")], [], duration_s=30.0, labels=["a"])
    assert m.error_rate == 1.0 and m.f1 == 0.0
    assert m.counts.deletions == 10 and m.counts.n_ref == 10


def test_empty_reference_and_prediction():
    m = segment_metrics([], [], duration_s=30.0, labels=["a"])
    assert m.error_rate == 0.0 and m.f1 == 1.0 and m.reference_empty


def test_empty_reference_with_prediction_is_flagged():
    m = segment_metrics([], [(1.0, 2.0, "a")], duration_s=30.0, labels=["a"])
    assert m.reference_empty and math.isnan(m.error_rate) and m.f1 == 0.0


def test_substitution_counting():
    m = segment_metrics([(0, 1, "a")], [(0, 1, "b")], duration_s=1.0, labels=["a", "b"])
    assert (m.counts.substitutions, m.counts.deletions, m.counts.insertions) == (1, 0, 0)
    assert m.error_rate == 1.0


def test_partial_trailing_segment_counts():
    m = segment_metrics([(2.2, 2.4, "a")], [], duration_s=2.5, labels=["a"])
    assert m.counts.n_segments == 3 and m.counts.n_ref == 1


@pytest.mark.parametrize("bad", [(-1.0, 2.0, "a"), (3.0, 3.0, "a"), (4.0, 2.0, "a")])
def test_invalid_events_raise(bad):
    with pytest.raises(ValueError):
        segment_metrics([bad], [], duration_s=10.0)


def test_matches_brute_force_on_50_random_pairs(rng):
    for _ in range(50):
        duration = float(rng.choice([30.0, 12.5, 5.0]))
        assert_matches_oracle(random_events(rng, duration=duration),
                              random_events(rng, duration=duration), duration)


@settings(max_examples=80, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_swap_symmetry(seed):
    rng = np.random.default_rng(seed)
    ref, est = random_events(rng), random_events(rng)
    a = segment_metrics(ref, est, duration_s=30.0, labels=CLASSES)
    b = segment_metrics(est, ref, duration_s=30.0, labels=CLASSES)
    assert a.counts.tp == b.counts.tp
    assert (a.counts.fp, a.counts.fn) == (b.counts.fn, b.counts.fp)
    assert a.f1 == b.f1


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 5))
def test_integer_segment_shift_invariance(seed, shift):
    rng = np.random.default_rng(seed)
    ref, est = random_events(rng, duration=20.0), random_events(rng, duration=20.0)
    move = lambda evs: [(a + shift, b + shift, c) for a, b, c in evs]
    a = segment_metrics(ref, est, duration_s=20.0, labels=CLASSES)
    b = segment_metrics(move(ref), move(est), duration_s=20.0 + shift, labels=CLASSES)
    assert (a.counts.tp, a.counts.fp, a.counts.fn) == (b.counts.tp, b.counts.fp, b.counts.fn)
    assert a.f1 == b.f1
    assert a.error_rate == b.error_rate or (math.isnan(a.error_rate) and math.isnan(b.error_rate))


def test_error_rate_zero_iff_identical_segment_sets(rng):
    for _ in range(100):
        ref, est = random_events(rng, 3, 8.0), random_events(rng, 3, 8.0)
        m = segment_metrics(ref, est, duration_s=8.0, labels=CLASSES)
        o = brute_force_segments(ref, est, 8.0)
        same = o["FP"] == 0 and o["FN"] == 0
        assert (m.error_rate == 0.0) == same or m.reference_empty


def test_accumulator_sums_recordings(rng):
    acc = SegmentAccumulator(CLASSES)
    totals = dict(TP=0, FP=0, FN=0)
    for _ in range(10):
        ref, est = random_events(rng, duration=5.0), random_events(rng, duration=5.0)
        acc.add(ref, est, 5.0)
        o = brute_force_segments(ref, est, 5.0)
        for k in totals:
            totals[k] += o[k]
    m = acc.result()
    assert (m.counts.tp, m.counts.fp, m.counts.fn) == (totals["TP"], totals["FP"], totals["FN"])
    assert m.f1 == 2 * totals["TP"] / (2 * totals["TP"] + totals["FP"] + totals["FN"])


def test_class_wise_scores():
    m = segment_metrics([(0, 2, "a"), (0, 1, "b")], [(0, 1, "a")], duration_s=2.0)
    assert m.class_wise["a"]["f1"] == pytest.approx(2 / 3)
    assert m.class_wise["b"]["f1"] == 0.0 and m.class_wise["b"]["error_rate"] == 1.0


# -- cross-fold aggregation

def test_cross_fold_examples():
    same = cross_fold_report([{"asc_accuracy": 0.8}] * 3, "asc")
    assert same.asc_accuracy == (pytest.approx(0.8), 0.0)
    two = cross_fold_report([{"asc_accuracy": 0.0}, {"asc_accuracy": 1.0}], "asc")
    assert two.asc_accuracy == (0.5, 0.5)


def test_cross_fold_matches_hand_computation(rng):
    vals = rng.random(5) * 100
    rep = cross_fold_report([{"sed_f1": v, "sed_er": v / 100} for v in vals], "sed")
    mean = sum(vals) / 5
    std = math.sqrt(sum((v - mean) ** 2 for v in vals) / 5)
    assert rep.sed_f1[0] == pytest.approx(mean, rel=1e-12)
    assert rep.sed_f1[1] == pytest.approx(std, rel=1e-12)
    assert rep.asc_accuracy is None


def test_report_serialization_and_table():
    rep = cross_fold_report([{"asc_accuracy": 0.9, "sed_f1": 30.0, "sed_er": float("nan")}], "joint")
    d = rep.to_dict()
    assert d["asc_accuracy"] == [0.9, 0.0] and '"task": "joint"' in rep.to_json()
    table = format_table({"Joint model": rep, "Separate models": EvalReport("asc")})
    assert "0.90 σ 0.00" in table and "30.00 σ 0.00" in table
    assert "Separate models" in table
