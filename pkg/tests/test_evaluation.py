"""Matching and AP checks, including a brute-force cross-validation route.

The frozen fixture (two objects; hits at scores 0.9 and 0.3 with a miss
at 0.5 between them) has exact areas worked out by hand: 5/6 under the
full envelope and 28/33 under the eleven-point sampling.
"""

import numpy as np
import pytest

from detfuse.dataset import DetectionRecord, GroundTruthRecord
from detfuse.errors import DataError
from detfuse.evaluation import (
    MatchLabel,
    ap_all_points,
    ap_eleven_point,
    average_precision,
    evaluate_detections,
    match_detections,
    pr_curve,
)
from detfuse.geometry import BBox

from oracles import ap_11_naive, ap_all_naive, curve_naive, match_naive


def det(img, cat, box, score):
    return DetectionRecord(img, cat, BBox(*box), score)


def gt(img, cat, box, ignore=False):
    return GroundTruthRecord(img, cat, BBox(*box), ignore)


FIXTURE_GT = [gt("i", "c", (0, 0, 10, 10)), gt("i", "c", (100, 100, 110, 110))]
FIXTURE_DETS = [
    det("i", "c", (0, 0, 10, 10), 0.9),
    det("i", "c", (50, 50, 60, 60), 0.5),
    det("i", "c", (100, 100, 110, 110), 0.3),
]


def test_fixture_all_points_ap():
    result = evaluate_detections(FIXTURE_DETS, FIXTURE_GT, ap_mode="all")
    assert result.map == pytest.approx(5 / 6, abs=1e-6)


def test_fixture_eleven_point_ap():
    result = evaluate_detections(FIXTURE_DETS, FIXTURE_GT, ap_mode="11pt")
    assert result.map == pytest.approx(28 / 33, abs=1e-6)


def test_duplicate_detection_is_false_positive():
    truth = [gt("i", "c", (0, 0, 10, 10))]
    dets = [
        det("i", "c", (0, 0, 10, 10), 0.9),
        det("i", "c", (1, 0, 11, 10), 0.8),
    ]
    assert match_detections(dets, truth) == [MatchLabel.TP, MatchLabel.FP]


def test_lower_scored_detection_matches_first_on_higher_score():
    truth = [gt("i", "c", (0, 0, 10, 10))]
    dets = [
        det("i", "c", (1, 0, 11, 10), 0.5),
        det("i", "c", (0, 0, 10, 10), 0.9),
    ]
    # the 0.9 detection claims the object even though it comes second
    assert match_detections(dets, truth) == [MatchLabel.FP, MatchLabel.TP]


def test_detection_claims_highest_overlap_object():
    truth = [gt("i", "c", (0, 0, 10, 10)), gt("i", "c", (4, 0, 14, 10))]
    dets = [det("i", "c", (3, 0, 13, 10), 0.9)]
    labels = match_detections(dets, truth)
    assert labels == [MatchLabel.TP]
    # the second object is still open for a later detection
    more = dets + [det("i", "c", (0, 0, 10, 10), 0.1)]
    assert match_detections(more, truth) == [MatchLabel.TP, MatchLabel.TP]


def test_ignored_only_overlap_is_excluded():
    truth = [gt("i", "c", (0, 0, 10, 10), ignore=True)]
    dets = [det("i", "c", (0, 0, 10, 10), 0.9)]
    assert match_detections(dets, truth) == [MatchLabel.IGNORED]


def test_real_match_preferred_over_ignored():
    truth = [
        gt("i", "c", (0, 0, 10, 10), ignore=True),
        gt("i", "c", (2, 0, 12, 10)),
    ]
    dets = [det("i", "c", (1, 0, 11, 10), 0.9)]
    assert match_detections(dets, truth) == [MatchLabel.TP]


def test_duplicate_outranks_ignored():
    truth = [
        gt("i", "c", (0, 0, 10, 10)),
        gt("i", "c", (0, 0, 10, 10), ignore=True),
    ]
    dets = [
        det("i", "c", (0, 0, 10, 10), 0.9),
        det("i", "c", (0, 0, 10, 10), 0.8),
    ]
    assert match_detections(dets, truth) == [MatchLabel.TP, MatchLabel.FP]


def test_score_ties_resolve_by_input_order():
    truth = [gt("i", "c", (0, 0, 10, 10))]
    dets = [
        det("i", "c", (0, 0, 10, 10), 0.5),
        det("i", "c", (0, 0, 10, 10), 0.5),
    ]
    assert match_detections(dets, truth) == [MatchLabel.TP, MatchLabel.FP]


def test_pr_curve_accumulation():
    triples = [(0.9, 0, MatchLabel.TP), (0.5, 1, MatchLabel.FP), (0.3, 2, MatchLabel.TP)]
    curve = pr_curve(triples, n_pos=2)
    assert curve.recalls.tolist() == [0.5, 0.5, 1.0]
    assert curve.precisions.tolist() == [1.0, 0.5, 2 / 3]
    assert curve.max_recall == 1.0


def test_pr_curve_drops_ignored_and_requires_positives():
    curve = pr_curve([(0.9, 0, MatchLabel.IGNORED), (0.5, 1, MatchLabel.TP)], n_pos=1)
    assert len(curve.scores) == 1
    with pytest.raises(DataError):
        pr_curve([(0.9, 0, MatchLabel.TP)], n_pos=0)


def test_empty_curve_gives_zero_ap():
    empty = np.array([])
    assert ap_all_points(empty, empty) == 0.0
    assert ap_eleven_point(empty, empty) == 0.0


def test_average_precision_rejects_unknown_mode():
    curve = pr_curve([(0.9, 0, MatchLabel.TP)], n_pos=1)
    with pytest.raises(ValueError):
        average_precision(curve, "area")


def test_map_is_unweighted_mean_over_categories():
    truth = [
        gt("i", "a", (0, 0, 10, 10)),
        gt("i", "b", (0, 0, 10, 10)),
        gt("i", "b", (20, 20, 30, 30)),
    ]
    dets = [
        det("i", "a", (0, 0, 10, 10), 0.9),  # AP(a) = 1
        det("i", "b", (0, 0, 10, 10), 0.9),  # AP(b) = 0.5
    ]
    result = evaluate_detections(dets, truth)
    assert result.per_category["a"].ap == pytest.approx(1.0)
    assert result.per_category["b"].ap == pytest.approx(0.5)
    assert result.map == pytest.approx(0.75)


def test_unmeasurable_categories_are_rejected_only_when_requested():
    truth = [gt("i", "a", (0, 0, 10, 10)), gt("i", "b", (0, 0, 10, 10), ignore=True)]
    dets = [det("i", "a", (0, 0, 10, 10), 0.9)]
    result = evaluate_detections(dets, truth)
    assert set(result.per_category) == {"a"}
    with pytest.raises(DataError, match="b"):
        evaluate_detections(dets, truth, categories=["a", "b"])
    with pytest.raises(DataError):
        evaluate_detections(dets, [gt("i", "a", (0, 0, 1, 1), ignore=True)])


def _random_instance(rng):
    n_gt = int(rng.integers(1, 6))
    n_det = int(rng.integers(0, 21))
    gts = []
    n_real = 0
    for j in range(n_gt):
        x, y = rng.integers(0, 60, size=2)
        w, h = rng.integers(8, 40, size=2)
        ignore = bool(rng.random() < 0.15) if n_real or j < n_gt - 1 else False
        n_real += not ignore
        gts.append((float(x), float(y), float(x + w), float(y + h), ignore))
    dets = []
    for _ in range(n_det):
        if gts and rng.random() < 0.6:
            # perturb an annotation so matches actually occur
            x1, y1, x2, y2, _ = gts[int(rng.integers(len(gts)))]
            dx = rng.normal(0, 6, size=4)
            x1, x2 = sorted((x1 + dx[0], x2 + dx[1]))
            y1, y2 = sorted((y1 + dx[2], y2 + dx[3]))
            box = (x1, y1, max(x2, x1 + 1), max(y2, y1 + 1))
        else:
            x, y = rng.integers(0, 60, size=2)
            w, h = rng.integers(8, 40, size=2)
            box = (float(x), float(y), float(x + w), float(y + h))
        score = round(float(rng.random()), 1)  # coarse grid forces ties
        dets.append((score, box))
    return dets, gts


def test_random_instances_match_naive_route():
    rng = np.random.default_rng(1234)
    checked = 0
    for _ in range(80):
        raw_dets, raw_gts = _random_instance(rng)
        truth = [gt("i", "c", g[:4], ignore=g[4]) for g in raw_gts]
        dets = [det("i", "c", box, score) for score, box in raw_dets]
        n_pos = sum(1 for g in raw_gts if not g[4])
        if n_pos == 0:
            continue
        labels = match_detections(dets, truth)
        expect = match_naive(raw_dets, [(g[:4], g[4]) for g in raw_gts], 0.5)
        by_name = {"tp": MatchLabel.TP, "fp": MatchLabel.FP, "ign": MatchLabel.IGNORED}
        assert labels == [by_name[e] for e in expect]
        result_all = evaluate_detections(dets, truth, ap_mode="all")
        result_11 = evaluate_detections(dets, truth, ap_mode="11pt")
        recalls, precisions = curve_naive(
            [(score, e) for (score, _), e in zip(raw_dets, expect)], n_pos
        )
        assert result_all.map == pytest.approx(
            ap_all_naive(recalls, precisions), abs=1e-9
        )
        assert result_11.map == pytest.approx(
            ap_11_naive(recalls, precisions), abs=1e-9
        )
        checked += 1
    assert checked >= 60
