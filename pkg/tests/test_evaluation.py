import itertools
import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rotorfp.errors import ContractViolation
from rotorfp.evaluation import (MatchReport, greedy_pairs, iou, latency_summary, match_and_score,
                                score_frames)
from rotorfp.segmentation import Box

log = logging.getLogger(__name__)


def test_iou_examples():
    a = Box(0, 0, 9, 9)
    assert iou(a, a) == 1.0
    assert iou(a, Box(20, 20, 29, 29)) == 0.0
    assert iou(a, Box(0, 5, 9, 14)) == pytest.approx(1 / 3, abs=0)
    assert iou(Box(0, 0, 0, 0), Box(1, 0, 1, 0)) == 0.0


def test_match_examples():
    g = Box(0, 0, 9, 9)
    r = match_and_score([g], [g])
    assert (r.tp, r.fp, r.fn, r.precision, r.recall, r.f1) == (1, 0, 0, 1.0, 1.0, 1.0)
    r = match_and_score([], [g])
    assert (r.tp, r.fp, r.fn, r.precision, r.recall, r.f1) == (0, 0, 1, 0.0, 0.0, 0.0)
    r = match_and_score([g, Box(0, 0, 9, 11)], [g])
    assert (r.tp, r.fp, r.fn) == (1, 1, 0)
    assert (r.precision, r.recall) == (0.5, 1.0)
    assert r.f1 == pytest.approx(2 / 3, abs=1e-15)


def test_greedy_takes_best_iou_first():
    g = Box(0, 0, 9, 9)
    preds = [Box(0, 0, 9, 11), g]
    assert greedy_pairs(preds, [g]) == [(1, 0, 1.0)]


def test_tie_goes_to_lower_pred_index():
    g = Box(0, 0, 9, 9)
    preds = [Box(0, 0, 9, 11), Box(0, 0, 11, 9)]  # equal IoU
    assert greedy_pairs(preds, [g])[0][:2] == (0, 0)


def test_threshold_inclusive():
    a, b = Box(0, 0, 9, 9), Box(0, 0, 9, 19)
    assert iou(a, b) == 0.5
    assert match_and_score([a], [b], 0.5).tp == 1


def test_micro_average():
    g = Box(0, 0, 9, 9)
    preds = {0: [g], 1: [g], 3: [Box(50, 50, 60, 60)]}
    gts = {0: [g], 1: [], 2: [g]}
    r = score_frames(preds, gts)
    assert (r.tp, r.fp, r.fn) == (1, 2, 1)
    assert r == sum((match_and_score(preds.get(w, []), gts.get(w, [])) for w in range(4)),
                    MatchReport(0, 0, 0))


def test_latency_examples():
    s = latency_summary([1, 2, 3, 4, 5])
    assert (s.median_ms, s.iqr_ms, s.p95_ms, s.n) == (3.0, 2.0, pytest.approx(4.8), 5)
    s = latency_summary([7])
    assert (s.median_ms, s.iqr_ms, s.p95_ms) == (7.0, 0.0, 7.0)
    s = latency_summary([2.5] * 9)
    assert (s.median_ms, s.iqr_ms) == (2.5, 0.0)
    with pytest.raises(ContractViolation):
        latency_summary([])


@given(st.lists(st.floats(0, 1e4), min_size=1, max_size=100))
def test_latency_invariants(xs):
    s = latency_summary(xs)
    assert s.iqr_ms >= 0 and s.p95_ms >= s.median_ms


boxes = st.lists(st.tuples(st.integers(0, 30), st.integers(0, 30), st.integers(1, 15),
                           st.integers(1, 15))
                 .map(lambda t: Box(t[0], t[1], t[0] + t[2] - 1, t[1] + t[3] - 1)), max_size=6)


@given(boxes, boxes)
def test_swap_symmetry(p, g):
    a, b = match_and_score(p, g), match_and_score(g, p)
    assert (a.tp, a.fp, a.fn) == (b.tp, b.fn, b.fp)
    assert (a.precision, a.recall) == (b.recall, b.precision)


@given(boxes, boxes)
def test_f1_formula(p, g):
    r = match_and_score(p, g)
    if r.precision + r.recall > 0:
        P, R = r.precision, r.recall
        assert abs(r.f1 - 2 * P * R / (P + R)) <= 1e-12
    assert 0.0 <= r.f1 <= 1.0


def optimal_tp(preds, gts, thr=0.5):
    best = 0
    small, big = (preds, gts) if len(preds) <= len(gts) else (gts, preds)
    for perm in itertools.permutations(range(len(big)), len(small)):
        best = max(best, sum(iou(small[i], big[j]) >= thr for i, j in enumerate(perm)))
    return best


def test_greedy_close_to_optimal():
    rng = np.random.default_rng(7)
    agree = 0
    for trial in range(1000):
        def draw():
            out = []
            for _ in range(rng.integers(0, 4)):
                x, y = rng.integers(0, 20, 2)
                w, h = rng.integers(3, 12, 2)
                out.append(Box(int(x), int(y), int(x + w - 1), int(y + h - 1)))
            return out
        preds, gts = draw(), draw()
        g, o = match_and_score(preds, gts).tp, optimal_tp(preds, gts)
        assert g <= o
        if g == o:
            agree += 1
        else:
            log.info("greedy %d vs optimal %d on trial %d", g, o, trial)
    assert agree >= 990
