import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from crstc import metrics as m
from crstc.segmentation import Event


def brute_confusion(pred, truth):
    tp = fp = fn = tn = 0
    for p, t in zip(pred, truth):
        if p == 1 and t == 1:
            tp += 1
        elif p == 1:
            fp += 1
        elif t == 1:
            fn += 1
        else:
            tn += 1
    acc = (tp + tn) / len(pred)
    prec = tp / (tp + fp) if tp + fp else 0.0
    rec = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * prec * rec / (prec + rec) if prec + rec else 0.0
    return tp, fp, fn, tn, acc, prec, rec, f1


def test_frame_identity():
    x = np.array([0, 1, 1, 0])
    r = m.frame_metrics(x, x)
    assert r.accuracy == 1.0 and r.f1 == 1.0


def test_frame_worked_example():
    r = m.frame_metrics([1, 0, 0, 0, 1, 0], [1, 1, 0, 0, 0, 0])
    assert (r.tp, r.fp, r.fn, r.tn) == (1, 1, 1, 3)
    assert r.accuracy == 4 / 6 and r.precision == 0.5 and r.recall == 0.5 and r.f1 == 0.5


def test_frame_all_negative():
    r = m.frame_metrics(np.zeros(5), np.zeros(5))
    assert r.accuracy == 1.0 and r.f1 == 0.0


def test_frame_errors():
    with pytest.raises(ValueError):
        m.frame_metrics([0, 1], [0])
    with pytest.raises(ValueError):
        m.frame_metrics([0, 2], [0, 1])


def test_frame_matches_brute_force_random():
    rng = np.random.default_rng(0)
    for _ in range(300):
        n = int(rng.integers(1, 161))
        p, t = rng.integers(0, 2, n), rng.integers(0, 2, n)
        r = m.frame_metrics(p, t)
        assert (r.tp, r.fp, r.fn, r.tn, r.accuracy, r.precision, r.recall, r.f1) == brute_confusion(p, t)


def test_event_f1_identical():
    evs = [Event(0, 1), Event(2, 3)]
    assert m.event_f1(evs, evs).event_f1 == 1.0


def test_event_f1_worked_example():
    truth = [Event(0, 1), Event(2, 3)]
    pred = [Event(0.1, 0.9), Event(2.5, 4.0)]
    assert m.interval_iou(pred[0], truth[0]) == pytest.approx(0.8)
    assert m.interval_iou(pred[1], truth[1]) == pytest.approx(0.25)
    r = m.event_f1(pred, truth, 0.5)
    assert (r.tp, r.fp, r.fn) == (1, 1, 1) and r.event_f1 == 0.5


def test_event_f1_empty_pred():
    r = m.event_f1([], [Event(0, 1)])
    assert r.event_f1 == 0.0 and r.fn == 1


def test_event_f1_threshold_range():
    with pytest.raises(ValueError):
        m.event_f1([], [], 0.0)
    with pytest.raises(ValueError):
        m.event_f1([], [], 1.5)


def test_event_f1_greedy_one_to_one():
    truth = [Event(0, 1)]
    pred = [Event(0, 1), Event(0.05, 1)]
    r = m.event_f1(pred, truth)
    assert (r.tp, r.fp, r.fn) == (1, 1, 0) and r.matches[0][:2] == (0, 0)


def test_event_iou_examples():
    assert m.event_iou([Event(1, 3)], [Event(2, 4)]) == pytest.approx(1 / 3)
    assert m.event_iou([Event(1, 3)], [Event(1, 3)]) == 1.0
    assert m.event_iou([Event(0, 1)], [Event(2, 3)]) == 0.0
    assert m.event_iou([], []) == 1.0


events_strategy = st.lists(
    st.tuples(st.integers(0, 79), st.integers(1, 10)), max_size=6
).map(lambda xs: _disjoint(xs))


def _disjoint(xs):
    out, last = [], -1
    for s, d in sorted(xs):
        if s > last:
            out.append(Event(s / 10, (s + d) / 10))
            last = s + d
    return out


@given(events_strategy, events_strategy)
@settings(max_examples=150, deadline=None)
def test_event_iou_symmetric(a, b):
    assert m.event_iou(a, b) == pytest.approx(m.event_iou(b, a), abs=1e-12)


@given(events_strategy, events_strategy)
@settings(max_examples=150, deadline=None)
def test_event_f1_swap_symmetry(a, b):
    r1, r2 = m.event_f1(a, b), m.event_f1(b, a)
    assert r1.tp == r2.tp
    assert r1.precision == pytest.approx(r2.recall) and r1.recall == pytest.approx(r2.precision)
    assert r1.event_f1 == pytest.approx(r2.event_f1)


@given(events_strategy, events_strategy, st.floats(0.01, 0.99))
@settings(max_examples=100, deadline=None)
def test_event_iou_split_invariant(a, b, frac):
    if not a:
        return
    e = a[0]
    cut = e.onset_s + frac * e.duration
    split = [Event(e.onset_s, cut), Event(cut, e.offset_s)] + a[1:]
    assert m.event_iou(split, b) == pytest.approx(m.event_iou(a, b), abs=1e-12)


def test_event_iou_on_frame_grid_matches_counting():
    # coverage IoU on grid-aligned events equals frame-count IoU
    rng = np.random.default_rng(1)
    from crstc.segmentation import labels_to_events
    for _ in range(50):
        p, t = rng.integers(0, 2, 160), rng.integers(0, 2, 160)
        inter, union = np.sum(p & t), np.sum(p | t)
        expected = 1.0 if union == 0 else inter / union
        assert m.event_iou(labels_to_events(p), labels_to_events(t)) == pytest.approx(expected)


def _file(pred, truth):
    from crstc.segmentation import labels_to_events
    pred, truth = np.array(pred), np.array(truth)
    return pred, truth, labels_to_events(pred), labels_to_events(truth)


def test_corpus_single_file_equals_per_file():
    f = _file([1, 1, 0, 0, 1, 0], [1, 0, 0, 0, 1, 1])
    rep = m.evaluate_corpus([f])
    single = m.evaluate_file(*f)
    assert rep["frame"] == single["frame"]
    assert rep["event_f1"] == single["event"]["event_f1"]
    assert rep["event_iou"] == single["event"]["event_iou"]


def test_corpus_pooled_accuracy():
    a = _file([1, 0, 1, 0], [1, 0, 1, 0])
    b = _file([1, 1, 0, 0], [1, 0, 1, 0])
    assert m.evaluate_corpus([a, b])["frame_accuracy"] == 0.75


def test_corpus_duplicate_file_invariance():
    a = _file([1, 1, 0, 0, 1], [1, 0, 0, 1, 1])
    b = _file([0, 1, 1, 0, 0], [0, 1, 1, 1, 0])
    one, two = m.evaluate_corpus([a, b]), m.evaluate_corpus([a, b, a, b])
    for k in ("frame_accuracy", "frame_f1", "event_f1"):
        assert one[k] == pytest.approx(two[k])


def test_corpus_needs_files():
    with pytest.raises(ValueError):
        m.evaluate_corpus([])
