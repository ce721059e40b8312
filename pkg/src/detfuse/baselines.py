"""Reference fusers: Platt max, weighted sum, and naive Bayes.

All three score the same detection clusters the evidence fuser uses,
but keep the anchor box unchanged (no box refinement) and rank by a
scalar fused score:

* Platt max: each detector's score is calibrated to a probability with
  a per-detector sigmoid; the cluster takes the largest calibrated
  probability, with silence contributing 0.
* Weighted sum: a per-category linear weighting of the calibrated
  probability vector, trained with hinge loss.
* Naive Bayes: per-detector binned likelihood ratios with equal priors;
  silent detectors simply contribute no factor.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .dataset import DetectionRecord, DetectorDump, GroundTruthRecord
from .errors import DataError, NumericalError
from .evaluation import MatchLabel, label_run
from .fusion import Cluster, build_clusters, nms

N_BAYES_BINS = 20


def _sigmoid(z: np.ndarray | float) -> np.ndarray | float:
    return 1.0 / (1.0 + np.exp(-np.clip(z, -500.0, 500.0)))


def fit_sigmoid(
    scores: Sequence[float],
    labels: Sequence[bool],
    smooth_targets: bool = True,
    l2: float = 1e-6,
    max_iter: int = 500,
    tol: float = 1e-8,
) -> tuple[float, float]:
    """Newton fit of p(target | x) = sigmoid(a*x + b).

    Minimizes cross-entropy plus (l2/2)*a**2; only the slope is
    penalized. With ``smooth_targets`` positives train toward
    (N+ + 1)/(N+ + 2) and negatives toward 1/(N- + 2) instead of hard
    0/1, which keeps the fit finite on separable data.
    """
    x = np.asarray(scores, dtype=float)
    y = np.asarray(labels, dtype=bool)
    if x.size == 0:
        raise DataError("cannot calibrate with no examples")
    n_pos = int(y.sum())
    n_neg = int(y.size - n_pos)
    if smooth_targets:
        t_pos = (n_pos + 1.0) / (n_pos + 2.0)
        t_neg = 1.0 / (n_neg + 2.0)
    else:
        t_pos, t_neg = 1.0, 0.0
    t = np.where(y, t_pos, t_neg)

    def objective(a: float, b: float) -> float:
        z = a * x + b
        # stable log(1+exp(z)) split by the target decomposition
        ll = t * np.logaddexp(0.0, -z) + (1.0 - t) * np.logaddexp(0.0, z)
        return float(ll.sum() + 0.5 * l2 * a * a)

    a, b = 0.0, 0.0
    obj = objective(a, b)
    for _ in range(max_iter):
        p = _sigmoid(a * x + b)
        d = p - t
        grad_a = float(d @ x) + l2 * a
        grad_b = float(d.sum())
        if max(abs(grad_a), abs(grad_b)) < tol:
            break
        w = p * (1.0 - p)
        h_aa = float(w @ (x * x)) + l2 + 1e-12
        h_ab = float(w @ x)
        h_bb = float(w.sum()) + 1e-12
        det = h_aa * h_bb - h_ab * h_ab
        if det <= 0.0:
            raise NumericalError("sigmoid fit produced a singular Hessian")
        step_a = (h_bb * grad_a - h_ab * grad_b) / det
        step_b = (h_aa * grad_b - h_ab * grad_a) / det
        scale = 1.0
        for _ in range(50):
            new_obj = objective(a - scale * step_a, b - scale * step_b)
            if new_obj <= obj + 1e-12:
                break
            scale *= 0.5
        a -= scale * step_a
        b -= scale * step_b
        obj = objective(a, b)
    return a, b


@dataclass(frozen=True, slots=True)
class PlattModel:
    """p(target | score) = 1 / (1 + exp(-alpha * (score + beta)))."""

    detector_id: str
    category: str
    alpha: float
    beta: float

    def calibrate(self, score: float) -> float:
        z = self.alpha * (score + self.beta)
        if z >= 0:
            return 1.0 / (1.0 + math.exp(-z))
        e = math.exp(z)
        return e / (1.0 + e)

    def to_dict(self) -> dict:
        return {
            "detector_id": self.detector_id,
            "category": self.category,
            "alpha": self.alpha,
            "beta": self.beta,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "PlattModel":
        try:
            return cls(
                detector_id=str(obj["detector_id"]),
                category=str(obj["category"]),
                alpha=float(obj["alpha"]),
                beta=float(obj["beta"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"malformed calibration model: {exc}") from exc


def _labeled_scores(
    detections: Sequence[DetectionRecord],
    groundtruth: Sequence[GroundTruthRecord],
    category: str,
    iou_thresh: float,
) -> tuple[list[float], list[bool]]:
    cat_dets = [d for d in detections if d.category == category]
    labels = label_run(cat_dets, groundtruth, iou_thresh)
    scores = []
    truth = []
    for det, lab in zip(cat_dets, labels):
        if lab is MatchLabel.IGNORED:
            continue
        scores.append(det.score)
        truth.append(lab is MatchLabel.TP)
    return scores, truth


def build_platt_model(
    detections: Sequence[DetectionRecord],
    groundtruth: Sequence[GroundTruthRecord],
    detector_id: str,
    category: str,
    iou_thresh: float = 0.5,
    smooth_targets: bool = True,
) -> PlattModel:
    scores, truth = _labeled_scores(detections, groundtruth, category, iou_thresh)
    if not scores:
        raise DataError(
            f"detector {detector_id!r} has no counted detections for "
            f"{category!r}"
        )
    a, b = fit_sigmoid(scores, truth, smooth_targets=smooth_targets)
    beta = b / a if abs(a) > 1e-300 else 0.0
    return PlattModel(
        detector_id=detector_id, category=category, alpha=a, beta=beta
    )


def fit_hinge_weights(
    features: np.ndarray, labels: np.ndarray, c: float = 1.0, n_iter: int = 1000
) -> np.ndarray:
    """Deterministic full-batch subgradient descent on the hinge objective.

    Minimizes (lam/2)*||w||^2 + mean(max(0, 1 - y * Xw)) with
    lam = 1 / (c * n) and step size 1/(lam * t), so the trained weights
    solve the usual C-weighted margin problem without an intercept.
    """
    x = np.asarray(features, dtype=float)
    y = np.asarray(labels, dtype=float)
    if x.ndim != 2 or y.shape != (x.shape[0],):
        raise ValueError("features must be (n, k) with one +-1 label per row")
    if x.shape[0] == 0:
        raise DataError("cannot fit fusion weights with no examples")
    n = x.shape[0]
    lam = 1.0 / (c * n)
    w = np.zeros(x.shape[1])
    for t in range(1, n_iter + 1):
        margins = y * (x @ w)
        active = margins < 1.0
        grad = lam * w - (y[active] @ x[active]) / n
        w -= (1.0 / (lam * t)) * grad
    return w


@dataclass(frozen=True, slots=True)
class WeightedSumModel:
    """Per-category linear weights over calibrated detector probabilities."""

    category: str
    detector_ids: tuple[str, ...]
    weights: tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.detector_ids) != len(self.weights):
            raise ValueError("one weight per detector required")

    def to_dict(self) -> dict:
        return {
            "category": self.category,
            "detector_ids": list(self.detector_ids),
            "weights": list(self.weights),
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "WeightedSumModel":
        try:
            return cls(
                category=str(obj["category"]),
                detector_ids=tuple(str(d) for d in obj["detector_ids"]),
                weights=tuple(float(w) for w in obj["weights"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"malformed weighted-sum model: {exc}") from exc


def _calibrated_vector(
    cluster: Cluster, platt_models: Sequence[PlattModel]
) -> list[float]:
    return [
        0.0 if e is None else m.calibrate(e.score)
        for e, m in zip(cluster.entries, platt_models)
    ]


def _cluster_training_rows(
    dumps: Sequence[DetectorDump],
    groundtruth: Sequence[GroundTruthRecord],
    category: str,
    cluster_iou: float,
    iou_thresh: float,
) -> tuple[list[Cluster], list[MatchLabel]]:
    """Clusters over every validation image plus each anchor's match label."""
    gt_by_image: dict[str, list[GroundTruthRecord]] = {}
    for g in groundtruth:
        if g.category == category:
            gt_by_image.setdefault(g.image_id, []).append(g)
    image_ids = sorted(
        set(gt_by_image)
        | {img for d in dumps for img, cat in d.by_scope if cat == category}
    )
    clusters: list[Cluster] = []
    anchor_labels: list[MatchLabel] = []
    from .evaluation import match_detections

    for image_id in image_ids:
        per_det = [d.scoped(image_id, category) for d in dumps]
        gt_here = gt_by_image.get(image_id, [])
        labels = [match_detections(dets, gt_here, iou_thresh) for dets in per_det]
        for cluster in build_clusters(per_det, cluster_iou):
            k = cluster.anchor_detector
            j = per_det[k].index(cluster.anchor)
            clusters.append(cluster)
            anchor_labels.append(labels[k][j])
    return clusters, anchor_labels


def build_ws_model(
    dumps: Sequence[DetectorDump],
    groundtruth: Sequence[GroundTruthRecord],
    platt_models: Sequence[PlattModel],
    category: str,
    c: float = 1.0,
    cluster_iou: float = 0.3,
    iou_thresh: float = 0.5,
) -> WeightedSumModel:
    clusters, anchor_labels = _cluster_training_rows(
        dumps, groundtruth, category, cluster_iou, iou_thresh
    )
    rows = []
    ys = []
    for cluster, lab in zip(clusters, anchor_labels):
        if lab is MatchLabel.IGNORED:
            continue
        rows.append(_calibrated_vector(cluster, platt_models))
        ys.append(1.0 if lab is MatchLabel.TP else -1.0)
    if not rows:
        raise DataError(f"no counted clusters to train weights for {category!r}")
    w = fit_hinge_weights(np.array(rows), np.array(ys), c=c)
    return WeightedSumModel(
        category=category,
        detector_ids=tuple(d.detector_id for d in dumps),
        weights=tuple(float(v) for v in w),
    )


@dataclass(frozen=True, slots=True)
class BayesModel:
    """Equal-width binned likelihoods of a detector's score given truth.

    Bins span the validation score range with add-one smoothing, so
    unseen bins keep a small positive likelihood. Out-of-range scores
    clamp to the edge bins.
    """

    detector_id: str
    category: str
    lo: float
    hi: float
    like_target: tuple[float, ...]
    like_clutter: tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.like_target) != N_BAYES_BINS:
            raise ValueError(f"expected {N_BAYES_BINS} target likelihoods")
        if len(self.like_clutter) != N_BAYES_BINS:
            raise ValueError(f"expected {N_BAYES_BINS} clutter likelihoods")
        if not self.hi > self.lo:
            raise ValueError("score range must have positive width")

    def _bin(self, score: float) -> int:
        idx = int((score - self.lo) / (self.hi - self.lo) * N_BAYES_BINS)
        return min(max(idx, 0), N_BAYES_BINS - 1)

    def likelihoods(self, score: float) -> tuple[float, float]:
        idx = self._bin(score)
        return self.like_target[idx], self.like_clutter[idx]

    def to_dict(self) -> dict:
        return {
            "detector_id": self.detector_id,
            "category": self.category,
            "lo": self.lo,
            "hi": self.hi,
            "likeT": list(self.like_target),
            "likeF": list(self.like_clutter),
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "BayesModel":
        try:
            return cls(
                detector_id=str(obj["detector_id"]),
                category=str(obj["category"]),
                lo=float(obj["lo"]),
                hi=float(obj["hi"]),
                like_target=tuple(float(v) for v in obj["likeT"]),
                like_clutter=tuple(float(v) for v in obj["likeF"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"malformed likelihood model: {exc}") from exc


def build_bayes_model(
    detections: Sequence[DetectionRecord],
    groundtruth: Sequence[GroundTruthRecord],
    detector_id: str,
    category: str,
    iou_thresh: float = 0.5,
) -> BayesModel:
    scores, truth = _labeled_scores(detections, groundtruth, category, iou_thresh)
    if not scores:
        raise DataError(
            f"detector {detector_id!r} has no counted detections for "
            f"{category!r}"
        )
    lo, hi = min(scores), max(scores)
    if not hi > lo:
        raise DataError(
            f"detector {detector_id!r} scores for {category!r} span a "
            "zero-width range; likelihood bins are undefined"
        )
    counts_t = [0] * N_BAYES_BINS
    counts_f = [0] * N_BAYES_BINS
    width = (hi - lo) / N_BAYES_BINS
    for s, is_tp in zip(scores, truth):
        idx = min(int((s - lo) / width), N_BAYES_BINS - 1)
        if is_tp:
            counts_t[idx] += 1
        else:
            counts_f[idx] += 1
    n_t = sum(counts_t)
    n_f = sum(counts_f)
    return BayesModel(
        detector_id=detector_id,
        category=category,
        lo=lo,
        hi=hi,
        like_target=tuple((c + 1.0) / (n_t + N_BAYES_BINS) for c in counts_t),
        like_clutter=tuple((c + 1.0) / (n_f + N_BAYES_BINS) for c in counts_f),
    )


def _score_fuse_scope(
    per_detector: Sequence[Sequence[DetectionRecord]],
    cluster_score: Callable[[Cluster], float],
    cluster_iou: float,
    nms_iou: float,
) -> list[DetectionRecord]:
    fused = []
    for cluster in build_clusters(per_detector, cluster_iou):
        anchor = cluster.anchor
        fused.append(
            DetectionRecord(
                image_id=anchor.image_id,
                category=anchor.category,
                bbox=anchor.bbox,
                score=cluster_score(cluster),
            )
        )
    return nms(fused, nms_iou)


def platt_fuse_scope(
    per_detector: Sequence[Sequence[DetectionRecord]],
    platt_models: Sequence[PlattModel],
    cluster_iou: float = 0.3,
    nms_iou: float = 0.3,
) -> list[DetectionRecord]:
    """Fused score is the best calibrated probability in the cluster."""
    return _score_fuse_scope(
        per_detector,
        lambda cl: max(_calibrated_vector(cl, platt_models)),
        cluster_iou,
        nms_iou,
    )


def ws_fuse_scope(
    per_detector: Sequence[Sequence[DetectionRecord]],
    platt_models: Sequence[PlattModel],
    ws_model: WeightedSumModel,
    cluster_iou: float = 0.3,
    nms_iou: float = 0.3,
) -> list[DetectionRecord]:
    weights = ws_model.weights

    def score(cl: Cluster) -> float:
        v = _calibrated_vector(cl, platt_models)
        return float(sum(w * p for w, p in zip(weights, v)))

    return _score_fuse_scope(per_detector, score, cluster_iou, nms_iou)


def bayes_fuse_scope(
    per_detector: Sequence[Sequence[DetectionRecord]],
    bayes_models: Sequence[BayesModel],
    cluster_iou: float = 0.3,
    nms_iou: float = 0.3,
) -> list[DetectionRecord]:
    """Posterior difference under equal priors and independent detectors."""

    def score(cl: Cluster) -> float:
        prod_t = 1.0
        prod_f = 1.0
        for entry, model in zip(cl.entries, bayes_models):
            if entry is None:
                continue
            lt, lf = model.likelihoods(entry.score)
            prod_t *= lt
            prod_f *= lf
        return 0.5 * prod_t - 0.5 * prod_f

    return _score_fuse_scope(per_detector, score, cluster_iou, nms_iou)
