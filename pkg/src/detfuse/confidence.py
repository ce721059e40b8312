"""Per-detector, per-category confidence models fitted on validation data.

A model is a lookup table over the detector's validation score sweep.
At each distinct score the sweep records the cumulative recall r and
empirical precision p, from which the mass over {target, not target,
uncertain} is

    m_target    = p
    m_not       = min(r**n, 1 - p)
    m_uncertain = 1 - m_target - m_not

where ``n`` controls how strict a reference the detector is held to:
``r**n`` is the miss rate of a hypothetical reference detector whose
precision is 1 - r**n, so larger ``n`` means a stronger reference and
less mass pushed onto "not target" at a given recall. ``n = inf`` is
the perfect reference: no recall short of 1.0 counts against a
detection.

Lookups linearly interpolate between bracketing table rows, clamp
outside the observed score range, then floor every component at 1e-6
and renormalize so no detector can be perfectly dogmatic.
"""

from __future__ import annotations

import bisect
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .dataset import DetectionRecord, GroundTruthRecord
from .errors import DataError
from .evaluation import MatchLabel, label_run
from .fusion import VACUOUS, MassTriple

MASS_FLOOR = 1e-6


def theoretical_precision(recall: float, n: float) -> float:
    """Precision of the reference detector, 1 - recall**n.

    ``n = inf`` yields 1.0 for any recall below one (0.0 at recall 1.0,
    since 1.0**inf == 1.0).
    """
    if not 0.0 <= recall <= 1.0:
        raise ValueError(f"recall must lie in [0, 1], got {recall!r}")
    if n < 1.0:
        raise ValueError(f"n must be >= 1, got {n!r}")
    return 1.0 - recall**n


def _mass_from_pr(precision: float, recall: float, n: float) -> MassTriple:
    m_not = min(recall**n, 1.0 - precision)
    return MassTriple(precision, m_not, 1.0 - precision - m_not)


@dataclass(frozen=True, slots=True)
class ConfidenceModel:
    """Score-indexed mass table for one (detector, category) pair.

    ``scores`` is strictly increasing; ``recalls`` aligns with it and is
    non-increasing (a higher score threshold passes fewer detections).
    ``recalls`` may be None on models loaded from older files, which
    only blocks the fixed-operating-point reading below.
    """

    detector_id: str
    category: str
    n: float
    scores: tuple[float, ...]
    masses: tuple[MassTriple, ...]
    recalls: tuple[float, ...] | None

    def __post_init__(self) -> None:
        if len(self.scores) < 2:
            raise DataError(
                f"model for {self.detector_id!r}/{self.category!r} needs at "
                f"least 2 distinct scores, got {len(self.scores)}"
            )
        if len(self.masses) != len(self.scores):
            raise ValueError("one mass row per score required")
        if self.recalls is not None and len(self.recalls) != len(self.scores):
            raise ValueError("one recall per score required")
        if any(b <= a for a, b in zip(self.scores, self.scores[1:])):
            raise ValueError("scores must be strictly increasing")

    def _interp_row(self, score: float) -> tuple[float, float, float]:
        scores = self.scores
        i = bisect.bisect_right(scores, score)
        if i == 0:
            return self.masses[0].as_tuple()
        if i == len(scores):
            return self.masses[-1].as_tuple()
        lo, hi = self.masses[i - 1], self.masses[i]
        t = (score - scores[i - 1]) / (scores[i] - scores[i - 1])
        return (
            lo.target + t * (hi.target - lo.target),
            lo.not_target + t * (hi.not_target - lo.not_target),
            lo.uncertain + t * (hi.uncertain - lo.uncertain),
        )

    def mass_at(self, score: float) -> MassTriple:
        """Interpolated mass, floored and renormalized."""
        t, n_, u = self._interp_row(score)
        t = max(t, MASS_FLOOR)
        n_ = max(n_, MASS_FLOOR)
        u = max(u, MASS_FLOOR)
        total = t + n_ + u
        return MassTriple(t / total, n_ / total, u / total)

    def precision_at(self, score: float) -> float:
        """Raw interpolated precision column, used as a box weight."""
        return self._interp_row(score)[0]

    def operating_index(self, operating_recall: float) -> int:
        """Index of the tightest threshold whose recall reaches the target.

        Scanning thresholds from strict to lenient, recall grows from
        ``min(recalls)`` to ``max(recalls)``; a target outside that span
        was never swept and has no defensible operating point.
        """
        if self.recalls is None:
            raise DataError(
                f"model for {self.detector_id!r}/{self.category!r} carries no "
                "recall column; rebuild it to use a fixed operating point"
            )
        lo, hi = min(self.recalls), max(self.recalls)
        if not lo <= operating_recall <= hi:
            raise DataError(
                f"operating recall {operating_recall} outside the swept range "
                f"[{lo:.4f}, {hi:.4f}] of {self.detector_id!r}/{self.category!r}"
            )
        best = -1
        for i, r in enumerate(self.recalls):
            if r >= operating_recall:
                best = i
        assert best >= 0
        return best

    def to_dict(self) -> dict:
        return {
            "detector_id": self.detector_id,
            "category": self.category,
            "n": self.n,
            "table": [
                {
                    "score": s,
                    "mT": m.target,
                    "mNotT": m.not_target,
                    "mI": m.uncertain,
                }
                for s, m in zip(self.scores, self.masses)
            ],
            **({} if self.recalls is None else {"recalls": list(self.recalls)}),
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "ConfidenceModel":
        try:
            table = obj["table"]
            scores = tuple(float(row["score"]) for row in table)
            masses = tuple(
                MassTriple(
                    float(row["mT"]), float(row["mNotT"]), float(row["mI"])
                )
                for row in table
            )
            recalls_raw = obj.get("recalls")
            return cls(
                detector_id=str(obj["detector_id"]),
                category=str(obj["category"]),
                n=float(obj["n"]),
                scores=scores,
                masses=masses,
                recalls=(
                    None
                    if recalls_raw is None
                    else tuple(float(r) for r in recalls_raw)
                ),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"malformed confidence model: {exc}") from exc


def build_confidence_model(
    detections: Sequence[DetectionRecord],
    groundtruth: Sequence[GroundTruthRecord],
    detector_id: str,
    category: str,
    n: float,
    iou_thresh: float = 0.5,
) -> ConfidenceModel:
    """Fit the mass table from a validation run of one detector.

    Detections for other categories are ignored. Duplicate scores in the
    sweep collapse onto the final row they produce, the one with the
    largest cumulative counts, so the table keys stay strictly
    increasing.
    """
    if n < 1.0:
        raise ValueError(f"n must be >= 1, got {n!r}")
    cat_dets = [d for d in detections if d.category == category]
    n_pos = sum(
        1 for g in groundtruth if g.category == category and not g.ignore
    )
    if n_pos == 0:
        raise DataError(f"no real groundtruth for category {category!r}")
    labels = label_run(cat_dets, groundtruth, iou_thresh)
    counted = sorted(
        (
            (d.score, seq, lab)
            for seq, (d, lab) in enumerate(zip(cat_dets, labels))
            if lab is not MatchLabel.IGNORED
        ),
        key=lambda t: (-t[0], t[1]),
    )
    if not counted:
        raise DataError(
            f"detector {detector_id!r} has no counted detections for "
            f"{category!r}"
        )
    rows: list[tuple[float, float, float]] = []  # (score, precision, recall)
    tp = 0
    fp = 0
    for score, _seq, lab in counted:
        if lab is MatchLabel.TP:
            tp += 1
        else:
            fp += 1
        row = (score, tp / (tp + fp), tp / n_pos)
        if rows and rows[-1][0] == score:
            rows[-1] = row
        else:
            rows.append(row)
    if len(rows) < 2:
        raise DataError(
            f"detector {detector_id!r} produced fewer than 2 distinct scores "
            f"for {category!r}"
        )
    rows.reverse()  # ascending score order
    return ConfidenceModel(
        detector_id=detector_id,
        category=category,
        n=n,
        scores=tuple(r[0] for r in rows),
        masses=tuple(_mass_from_pr(p, r, n) for _, p, r in rows),
        recalls=tuple(r[2] for r in rows),
    )


@dataclass(frozen=True, slots=True)
class StaticBpaSource:
    """Fixed-operating-point reading of a confidence model.

    Scores at or above the operating threshold always get the mass the
    model assigns at that threshold; everything below is vacuous. With
    ``threshold = inf`` the source is permanently vacuous, the stance
    for a detector whose sweep never reaches the requested recall.
    """

    threshold: float
    fixed: MassTriple

    def mass_at(self, score: float) -> MassTriple:
        return self.fixed if score >= self.threshold else VACUOUS

    @classmethod
    def from_model(
        cls,
        model: ConfidenceModel,
        operating_recall: float,
        unreachable: str = "error",
    ) -> "StaticBpaSource":
        if unreachable not in ("error", "vacuous"):
            raise ValueError(f"unknown unreachable policy {unreachable!r}")
        try:
            idx = model.operating_index(operating_recall)
        except DataError:
            if unreachable == "error":
                raise
            return cls(threshold=math.inf, fixed=VACUOUS)
        return cls(
            threshold=model.scores[idx],
            fixed=model.mass_at(model.scores[idx]),
        )


def save_model(model: ConfidenceModel, path: str | Path) -> None:
    Path(path).write_text(json.dumps(model.to_dict(), indent=1), encoding="utf-8")


def load_model(path: str | Path) -> ConfidenceModel:
    path = Path(path)
    try:
        obj = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON ({exc.msg})") from exc
    if not isinstance(obj, dict):
        raise DataError(f"{path}: expected a JSON object")
    return ConfidenceModel.from_dict(obj)
