from functools import lru_cache

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from murphy.metrics import (
    EvalRecord,
    Segment,
    average_precision,
    compute_sap,
    edit_distance,
    evaluation_report,
    frames_to_segments,
    mean_average_precision,
    segment_edit_distance,
    segments_to_frames,
)
from murphy.schema import TYPES


# -- independent oracles -----------------------------------------------------


def sweep_ap(scores, positives):
    """Threshold at every distinct score, count by brute force, sum recall steps x precision."""
    scores = [float(s) for s in scores]
    positives = [bool(p) for p in positives]
    n_pos = sum(positives)
    ap, prev_recall = 0.0, 0.0
    for tau in sorted(set(scores), reverse=True):
        chosen = [p for s, p in zip(scores, positives) if s >= tau]
        tp = sum(chosen)
        recall = tp / n_pos
        ap += (recall - prev_recall) * (tp / len(chosen))
        prev_recall = recall
    return ap


def levenshtein(a, b):
    a, b = tuple(a), tuple(b)

    @lru_cache(maxsize=None)
    def d(i, j):
        if i == 0 or j == 0:
            return i + j
        return min(d(i - 1, j) + 1, d(i, j - 1) + 1, d(i - 1, j - 1) + (a[i - 1] != b[j - 1]))

    return d(len(a), len(b))


def random_record(rng, n, cats):
    scores, labels = {}, {}
    for t in TYPES:
        raw = rng.random((n, cats))
        if rng.random() < 0.5:
            raw = np.round(raw, 1) + 0.05  # force ties, keep rows positive
        scores[t] = raw / raw.sum(axis=1, keepdims=True)
        labels[t] = rng.integers(0, cats, n)
    return EvalRecord(scores, labels, np.arange(n), np.zeros(n, dtype=int))


def oracle_map(record, t):
    y = record.labels[t]
    aps = [sweep_ap(record.scores[t][:, c], y == c) for c in range(record.scores[t].shape[1]) if (y == c).any()]
    return 100.0 * sum(aps) / len(aps)


# -- average precision --------------------------------------------------------


def test_four_frame_example():
    ap = average_precision(np.array([0.9, 0.8, 0.2, 0.1]), np.array([1, 0, 1, 0]))
    assert ap == pytest.approx((1 + 2 / 3) / 2, abs=1e-12)


def test_perfect_ranking_gives_100():
    rng = np.random.default_rng(0)
    y = rng.integers(0, 4, 50)
    onehot = np.eye(4)[y]
    rec = EvalRecord({t: onehot for t in TYPES}, {t: y for t in TYPES}, np.arange(50), np.zeros(50))
    assert all(mean_average_precision(rec, t) == 100.0 for t in TYPES)


def test_absent_category_is_excluded():
    y = np.array([0, 0, 1, 1])
    s = np.array([[0.6, 0.3, 0.1], [0.5, 0.2, 0.3], [0.2, 0.7, 0.1], [0.1, 0.5, 0.4]])
    rec = EvalRecord({t: s for t in TYPES}, {t: y for t in TYPES}, np.arange(4), np.zeros(4))
    expected = 100 * (sweep_ap(s[:, 0], y == 0) + sweep_ap(s[:, 1], y == 1)) / 2
    assert mean_average_precision(rec, "S") == pytest.approx(expected, abs=1e-12)
    assert np.isnan(average_precision(s[:, 2], y == 2))


@given(st.integers(0, 2**32 - 1))
def test_map_matches_sweep_oracle(seed):
    rng = np.random.default_rng(seed)
    rec = random_record(rng, int(rng.integers(1, 101)), int(rng.integers(1, 7)))
    for t in ("S", "O"):
        assert abs(mean_average_precision(rec, t) - oracle_map(rec, t)) < 1e-9


@given(st.integers(0, 2**32 - 1))
def test_ap_is_invariant_to_monotone_transforms(seed):
    rng = np.random.default_rng(seed)
    s = rng.random(30)
    y = rng.random(30) < 0.3
    y[0] = True
    base = average_precision(s, y)
    assert average_precision(np.exp(3 * s) - 7, y) == pytest.approx(base, abs=1e-12)
    assert average_precision(np.argsort(np.argsort(s)).astype(float), y) == pytest.approx(base, abs=1e-12)


def test_record_rejects_unnormalised_scores():
    with pytest.raises(ValueError, match="sum to 1"):
        EvalRecord({"S": np.ones((2, 2))}, {"S": np.zeros(2)}, np.arange(2), np.zeros(2))


def test_map_needs_frames():
    rec = EvalRecord({"S": np.zeros((0, 2))}, {"S": np.zeros(0, dtype=int)}, np.arange(0), np.zeros(0))
    with pytest.raises(ValueError):
        mean_average_precision(rec, "S")


# -- SAP --------------------------------------------------------------------


def test_sap_table_row():
    maps = {"S": 88.01, "T": 70.18, "IAO": 61.30, "I": 64.22, "A": 61.15, "O": 66.33}
    assert abs(compute_sap(maps, "SAP3") - 73.16) <= 0.01
    assert abs(compute_sap(maps, "SAP6") - 68.53) <= 0.01


def test_sap_equal_values_and_errors():
    maps = dict.fromkeys(TYPES, 42.5)
    assert compute_sap(maps, "SAP3") == compute_sap(maps, "SAP6") == 42.5
    with pytest.raises(KeyError):
        compute_sap({"S": 1.0, "T": 2.0}, "SAP3")
    with pytest.raises(ValueError):
        compute_sap(maps, "SAP4")


# -- segments and edit distance ---------------------------------------------


def test_constant_stream():
    assert frames_to_segments([3] * 100, 25) == [Segment(3, 0, 99)]


def test_short_interruption_is_absorbed():
    labels = [0] * 30 + [1] * 5 + [0] * 30
    assert frames_to_segments(labels, 10) == [Segment(0, 0, 64)]


def test_zero_tolerance_is_run_length_encoding():
    assert frames_to_segments([1, 1, 2, 1, 3, 3], 0) == [
        Segment(1, 0, 1), Segment(2, 2, 2), Segment(1, 3, 3), Segment(3, 4, 5)
    ]


def test_split_between_distinct_neighbours():
    segs = frames_to_segments([0] * 20 + [1] * 5 + [2] * 20, 10)
    assert segs == [Segment(0, 0, 22), Segment(2, 23, 44)]


def test_empty_stream_and_negative_tolerance():
    with pytest.raises(ValueError):
        frames_to_segments([], 5)
    with pytest.raises(ValueError):
        frames_to_segments([1], -1)


@given(st.lists(st.integers(0, 3), min_size=1, max_size=120), st.integers(0, 30))
def test_segment_filter_properties(labels, tol):
    segs = frames_to_segments(labels, tol)
    assert segs[0].start == 0 and segs[-1].end == len(labels) - 1
    assert all(a.end + 1 == b.start and a.category != b.category for a, b in zip(segs, segs[1:]))
    assert len(segs) == 1 or all(s.end - s.start + 1 >= tol for s in segs)
    assert frames_to_segments(segments_to_frames(segs), tol) == segs


def test_edit_distance_examples():
    assert edit_distance([1, 2, 3], [1, 2, 3]) == 0
    assert edit_distance([1, 2, 3], [1, 3]) == 1
    assert edit_distance([], [4, 5, 6]) == 3
    assert edit_distance([Segment(1, 0, 3), Segment(2, 4, 9)], [2]) == 1


@given(st.lists(st.integers(0, 4), max_size=12), st.lists(st.integers(0, 4), max_size=12))
def test_edit_distance_matches_recursive_oracle(a, b):
    assert edit_distance(a, b) == levenshtein(a, b)


@given(*(st.lists(st.integers(0, 3), max_size=10) for _ in range(3)))
def test_edit_distance_metric_axioms(a, b, c):
    assert edit_distance(a, b) == edit_distance(b, a)
    assert (edit_distance(a, b) == 0) == (a == b)
    assert edit_distance(a, c) <= edit_distance(a, b) + edit_distance(b, c)


def test_segment_edit_distance_ignores_timing():
    gt = [0] * 20 + [1] * 20
    pred = [0] * 35 + [1] * 5 + [2] * 3
    assert segment_edit_distance(gt, pred, 0) == 1
    assert segment_edit_distance(gt, pred, 10) == 1


# -- report -----------------------------------------------------------------


def _one_hot_record(rng):
    n = 80
    labels = {t: np.repeat(rng.integers(0, 5, 8), 10) for t in TYPES}
    scores = {t: np.eye(5)[labels[t]] for t in TYPES}
    seqs = np.repeat([0, 1], 40)
    return EvalRecord(scores, labels, np.tile(np.arange(40), 2), seqs, np.repeat([3, 4], 40))


def test_report_on_ground_truth():
    rep = evaluation_report(_one_hot_record(np.random.default_rng(1)))
    assert rep["sap3"] == rep["sap6"] == 100.0
    assert all(rep[f"ed{k}"][t] == 0 for k in (10, 25) for t in ("S", "T", "IAO"))
    assert set(rep) == {*TYPES, "sap3", "sap6", "ed10", "ed25", "by_surgeon"}
    assert set(rep["by_surgeon"]) == {"3", "4"}


def test_report_equals_direct_metric_calls():
    rng = np.random.default_rng(4)
    rec = random_record(rng, 60, 4)
    rec.sequence_ids[:] = np.repeat([0, 1, 2], 20)
    rep = evaluation_report(rec)
    maps = {t: mean_average_precision(rec, t) for t in TYPES}
    for t in TYPES:
        assert rep[t]["map"] == maps[t]
    assert rep["sap3"] == compute_sap(maps, "SAP3")
    for t in ("S", "T", "IAO"):
        pred = rec.scores[t].argmax(axis=1)
        eds = [segment_edit_distance(rec.labels[t][m], pred[m], 10) for m in (rec.sequence_ids == k for k in range(3))]
        assert rep["ed10"][t] == pytest.approx(np.mean(eds))
