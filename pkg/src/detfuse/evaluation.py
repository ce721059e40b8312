"""Detection evaluation: greedy matching, precision/recall curves, AP and mAP.

Matching is per image and per category. Detections are visited in
descending score order (ties keep input order) and greedily claim the
highest-IoU unmatched real groundtruth box at or above the IoU
threshold. A detection whose only sufficient overlaps are with already
matched real boxes is a duplicate and counts as a false positive. A
detection overlapping only ignored boxes is excluded from the curve
entirely.

The precision/recall curve has one point per counted detection and uses
raw cumulative precision; interpolation happens only inside the AP
integrators. Two interpolation modes are supported: ``"all"``
(area under the right-envelope at every recall change) and ``"11pt"``
(mean envelope precision sampled at recalls 0.0, 0.1, ..., 1.0).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .dataset import DetectionRecord, GroundTruthRecord
from .errors import DataError
from .geometry import iou

AP_MODES = ("all", "11pt")


class MatchLabel(enum.Enum):
    TP = "tp"
    FP = "fp"
    IGNORED = "ignored"


def match_detections(
    detections: Sequence[DetectionRecord],
    groundtruth: Sequence[GroundTruthRecord],
    iou_thresh: float = 0.5,
) -> list[MatchLabel]:
    """Label each detection within a single (image, category) scope.

    Returns labels aligned with the input order of ``detections``.
    """
    order = sorted(range(len(detections)), key=lambda i: -detections[i].score)
    real = [g for g in groundtruth if not g.ignore]
    ignored = [g for g in groundtruth if g.ignore]
    claimed = [False] * len(real)
    labels: list[MatchLabel] = [MatchLabel.FP] * len(detections)
    for idx in order:
        det = detections[idx]
        best_j = -1
        best_iou = 0.0
        any_real_hit = False
        for j, g in enumerate(real):
            ov = iou(det.bbox, g.bbox)
            if ov < iou_thresh:
                continue
            any_real_hit = True
            if not claimed[j] and ov > best_iou:
                best_iou = ov
                best_j = j
        if best_j >= 0:
            claimed[best_j] = True
            labels[idx] = MatchLabel.TP
        elif any_real_hit:
            labels[idx] = MatchLabel.FP
        elif any(iou(det.bbox, g.bbox) >= iou_thresh for g in ignored):
            labels[idx] = MatchLabel.IGNORED
        else:
            labels[idx] = MatchLabel.FP
    return labels


@dataclass(frozen=True)
class PRCurve:
    """One point per counted detection, in descending score order."""

    scores: np.ndarray
    recalls: np.ndarray
    precisions: np.ndarray
    n_pos: int

    def __post_init__(self) -> None:
        if not (len(self.scores) == len(self.recalls) == len(self.precisions)):
            raise ValueError("curve arrays must share one length")

    @property
    def max_recall(self) -> float:
        return float(self.recalls[-1]) if len(self.recalls) else 0.0


def pr_curve(
    labeled: Iterable[tuple[float, int, MatchLabel]], n_pos: int
) -> PRCurve:
    """Build the curve from (score, sequence, label) triples.

    ``sequence`` breaks score ties deterministically (lower first).
    Ignored entries are dropped before accumulation.
    """
    if n_pos <= 0:
        raise DataError("cannot build a recall axis with no real groundtruth")
    counted = sorted(
        (t for t in labeled if t[2] is not MatchLabel.IGNORED),
        key=lambda t: (-t[0], t[1]),
    )
    scores = np.array([t[0] for t in counted], dtype=float)
    is_tp = np.array([t[2] is MatchLabel.TP for t in counted], dtype=float)
    tp = np.cumsum(is_tp)
    fp = np.cumsum(1.0 - is_tp)
    recalls = tp / n_pos
    precisions = tp / np.maximum(tp + fp, 1.0)
    return PRCurve(scores=scores, recalls=recalls, precisions=precisions, n_pos=n_pos)


def ap_all_points(recalls: np.ndarray, precisions: np.ndarray) -> float:
    """Area under the precision envelope across every recall change."""
    if len(recalls) == 0:
        return 0.0
    mrec = np.concatenate(([0.0], recalls, [1.0]))
    mpre = np.concatenate(([0.0], precisions, [0.0]))
    for i in range(len(mpre) - 2, -1, -1):
        mpre[i] = max(mpre[i], mpre[i + 1])
    changed = np.flatnonzero(mrec[1:] != mrec[:-1])
    return float(np.sum((mrec[changed + 1] - mrec[changed]) * mpre[changed + 1]))


def ap_eleven_point(recalls: np.ndarray, precisions: np.ndarray) -> float:
    """Mean envelope precision at recalls 0.0, 0.1, ..., 1.0."""
    if len(recalls) == 0:
        return 0.0
    total = 0.0
    for t in np.linspace(0.0, 1.0, 11):
        mask = recalls >= t - 1e-12
        total += float(precisions[mask].max()) if mask.any() else 0.0
    return total / 11.0


def average_precision(curve: PRCurve, ap_mode: str = "all") -> float:
    if ap_mode == "all":
        return ap_all_points(curve.recalls, curve.precisions)
    if ap_mode == "11pt":
        return ap_eleven_point(curve.recalls, curve.precisions)
    raise ValueError(f"ap_mode must be one of {AP_MODES}, got {ap_mode!r}")


@dataclass(frozen=True)
class CategoryEval:
    category: str
    ap: float
    curve: PRCurve
    n_tp: int
    n_fp: int
    n_ignored: int


@dataclass(frozen=True)
class EvalResult:
    per_category: Mapping[str, CategoryEval]
    map: float
    ap_mode: str
    iou_thresh: float

    def to_dict(self) -> dict:
        return {
            "map": self.map,
            "ap_mode": self.ap_mode,
            "iou_thresh": self.iou_thresh,
            "per_category": {
                cat: {
                    "ap": ce.ap,
                    "n_pos": ce.curve.n_pos,
                    "n_tp": ce.n_tp,
                    "n_fp": ce.n_fp,
                    "n_ignored": ce.n_ignored,
                    "max_recall": ce.curve.max_recall,
                }
                for cat, ce in sorted(self.per_category.items())
            },
        }


def label_run(
    detections: Sequence[DetectionRecord],
    groundtruth: Sequence[GroundTruthRecord],
    iou_thresh: float = 0.5,
) -> list[MatchLabel]:
    """Match a whole run, scope by scope; labels align with input order."""
    gt_index: dict[tuple[str, str], list[GroundTruthRecord]] = {}
    for g in groundtruth:
        gt_index.setdefault((g.image_id, g.category), []).append(g)
    det_index: dict[tuple[str, str], list[int]] = {}
    for i, d in enumerate(detections):
        det_index.setdefault((d.image_id, d.category), []).append(i)
    labels: list[MatchLabel] = [MatchLabel.FP] * len(detections)
    for scope, idxs in det_index.items():
        scoped = match_detections(
            [detections[i] for i in idxs], gt_index.get(scope, []), iou_thresh
        )
        for i, label in zip(idxs, scoped):
            labels[i] = label
    return labels


def evaluate_detections(
    detections: Sequence[DetectionRecord],
    groundtruth: Sequence[GroundTruthRecord],
    iou_thresh: float = 0.5,
    ap_mode: str = "all",
    categories: Sequence[str] | None = None,
) -> EvalResult:
    """Full evaluation; mAP is the unweighted mean over measurable categories.

    A category is measurable when it has at least one non-ignored
    groundtruth box. Passing ``categories`` restricts the report to that
    subset (all of which must be measurable).
    """
    if ap_mode not in AP_MODES:
        raise ValueError(f"ap_mode must be one of {AP_MODES}, got {ap_mode!r}")
    n_pos: dict[str, int] = {}
    for g in groundtruth:
        if not g.ignore:
            n_pos[g.category] = n_pos.get(g.category, 0) + 1
    if categories is None:
        cats = tuple(sorted(n_pos))
    else:
        cats = tuple(categories)
        missing = [c for c in cats if n_pos.get(c, 0) == 0]
        if missing:
            raise DataError(f"no real groundtruth for categories {missing}")
    if not cats:
        raise DataError("no category has real groundtruth to evaluate against")

    labels = label_run(detections, groundtruth, iou_thresh)
    per_cat_triples: dict[str, list[tuple[float, int, MatchLabel]]] = {
        c: [] for c in cats
    }
    counts: dict[str, dict[MatchLabel, int]] = {
        c: {label: 0 for label in MatchLabel} for c in cats
    }
    for seq, (det, label) in enumerate(zip(detections, labels)):
        bucket = per_cat_triples.get(det.category)
        if bucket is None:
            continue
        bucket.append((det.score, seq, label))
        counts[det.category][label] += 1

    per_category: dict[str, CategoryEval] = {}
    for cat in cats:
        curve = pr_curve(per_cat_triples[cat], n_pos[cat])
        per_category[cat] = CategoryEval(
            category=cat,
            ap=average_precision(curve, ap_mode),
            curve=curve,
            n_tp=counts[cat][MatchLabel.TP],
            n_fp=counts[cat][MatchLabel.FP],
            n_ignored=counts[cat][MatchLabel.IGNORED],
        )
    mean_ap = float(np.mean([ce.ap for ce in per_category.values()]))
    return EvalResult(
        per_category=per_category, map=mean_ap, ap_mode=ap_mode, iou_thresh=iou_thresh
    )
