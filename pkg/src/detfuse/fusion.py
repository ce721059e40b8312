"""Evidence combination over detector outputs.

Each detector's opinion about one candidate box is a basic probability
assignment over three hypotheses: the box is a target, it is not a
target, or the detector cannot tell. Opinions are combined with
Dempster's rule, and the fused score of a box is belief(target) minus
belief(not target), which orders candidates for evaluation.

A detector that did not fire near a candidate contributes the vacuous
assignment (0, 0, 1), the identity of the combination rule, so silence
never votes for or against.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Protocol, Sequence

from .dataset import DetectionRecord
from .errors import TotalConflictError
from .geometry import BBox, iou

CONFLICT_EPS = 1e-12


@dataclass(frozen=True, slots=True)
class MassTriple:
    """Mass over {target, not target, uncertain}; components sum to one."""

    target: float
    not_target: float
    uncertain: float

    def __post_init__(self) -> None:
        for v in (self.target, self.not_target, self.uncertain):
            if not -1e-9 <= v <= 1.0 + 1e-9:
                raise ValueError(f"mass component out of [0, 1]: {v!r}")
        total = self.target + self.not_target + self.uncertain
        if abs(total - 1.0) > 1e-6:
            raise ValueError(f"mass components sum to {total!r}, expected 1")

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.target, self.not_target, self.uncertain)


VACUOUS = MassTriple(0.0, 0.0, 1.0)


def combine_two(a: MassTriple, b: MassTriple) -> MassTriple:
    """Dempster's rule for two assignments.

    Conflict (one says target, the other says not) is discarded and the
    rest renormalized. Raises when essentially all mass is conflict.
    """
    t = a.target * b.target + a.target * b.uncertain + a.uncertain * b.target
    n = (
        a.not_target * b.not_target
        + a.not_target * b.uncertain
        + a.uncertain * b.not_target
    )
    u = a.uncertain * b.uncertain
    norm = t + n + u
    if norm < CONFLICT_EPS:
        raise TotalConflictError(
            f"combining {a.as_tuple()} with {b.as_tuple()} leaves no mass"
        )
    return MassTriple(t / norm, n / norm, u / norm)


def combine_all(masses: Iterable[MassTriple]) -> MassTriple:
    """Left fold of ``combine_two`` starting from the vacuous assignment."""
    out = VACUOUS
    for m in masses:
        out = combine_two(out, m)
    return out


def final_confidence(m: MassTriple) -> float:
    """belief(target) - belief(not target); ranges over [-1, 1]."""
    return m.target - m.not_target


class MassSource(Protocol):
    def mass_at(self, score: float) -> MassTriple: ...


class PrecisionSource(Protocol):
    def precision_at(self, score: float) -> float: ...


def assign_bpa(source: MassSource, score: float | None) -> MassTriple:
    """Look up a detector's assignment; an absent detection is vacuous."""
    if score is None:
        return VACUOUS
    return source.mass_at(score)


@dataclass(frozen=True, slots=True)
class Cluster:
    """One candidate box plus, per detector, its best agreeing detection.

    ``entries[k]`` is detector k's strongest detection overlapping the
    anchor above the clustering IoU, or None when that detector stayed
    silent near the anchor. The anchor occupies its own slot.
    """

    anchor_detector: int
    entries: tuple[DetectionRecord | None, ...]

    @property
    def anchor(self) -> DetectionRecord:
        rec = self.entries[self.anchor_detector]
        assert rec is not None
        return rec


def build_clusters(
    per_detector: Sequence[Sequence[DetectionRecord]],
    cluster_iou: float = 0.3,
) -> list[Cluster]:
    """One cluster per detection, anchored on it, in detector-major order."""
    clusters: list[Cluster] = []
    for k, dets in enumerate(per_detector):
        for anchor in dets:
            entries: list[DetectionRecord | None] = []
            for j, others in enumerate(per_detector):
                if j == k:
                    entries.append(anchor)
                    continue
                best: DetectionRecord | None = None
                for cand in others:
                    if iou(anchor.bbox, cand.bbox) > cluster_iou:
                        if best is None or cand.score > best.score:
                            best = cand
                entries.append(best)
            clusters.append(Cluster(anchor_detector=k, entries=tuple(entries)))
    return clusters


def refine_bbox(
    cluster: Cluster, precision_sources: Sequence[PrecisionSource]
) -> BBox:
    """Precision-weighted mean of the member boxes.

    Weights come from each member's own detector model; if every weight
    is zero the anchor box is kept unchanged.
    """
    total = 0.0
    acc = [0.0, 0.0, 0.0, 0.0]
    for entry, src in zip(cluster.entries, precision_sources):
        if entry is None:
            continue
        w = src.precision_at(entry.score)
        if w <= 0.0:
            continue
        total += w
        for i, v in enumerate(entry.bbox.as_tuple()):
            acc[i] += w * v
    if total <= 0.0:
        return cluster.anchor.bbox
    x1, y1, x2, y2 = (v / total for v in acc)
    # float error can invert a degenerate axis; clamp instead of raising
    return BBox(x1, y1, max(x1, x2), max(y1, y2))


def nms(items: Sequence, iou_thresh: float = 0.3) -> list:
    """Greedy suppression on anything with ``.bbox`` and ``.score``.

    Keeps the highest-scoring item, drops everything overlapping it
    strictly above the threshold, repeats. Ties keep input order.
    """
    order = sorted(range(len(items)), key=lambda i: -items[i].score)
    kept: list = []
    for idx in order:
        cand = items[idx]
        if all(iou(cand.bbox, k.bbox) <= iou_thresh for k in kept):
            kept.append(cand)
    return kept


def fuse_scope(
    per_detector: Sequence[Sequence[DetectionRecord]],
    mass_sources: Sequence[MassSource],
    precision_sources: Sequence[PrecisionSource],
    cluster_iou: float = 0.3,
    nms_iou: float = 0.3,
) -> list[DetectionRecord]:
    """Fuse one (image, category) scope.

    Every detection anchors a cluster; slot assignments are combined
    with Dempster's rule; the fused score is the final confidence and
    the fused box is the precision-weighted refinement. Near-duplicate
    fused boxes are then suppressed.
    """
    if len(per_detector) != len(mass_sources) or len(per_detector) != len(
        precision_sources
    ):
        raise ValueError("one mass and one precision source per detector required")
    fused: list[DetectionRecord] = []
    for cluster in build_clusters(per_detector, cluster_iou):
        combined = combine_all(
            assign_bpa(src, e.score if e is not None else None)
            for src, e in zip(mass_sources, cluster.entries)
        )
        anchor = cluster.anchor
        fused.append(
            DetectionRecord(
                image_id=anchor.image_id,
                category=anchor.category,
                bbox=refine_bbox(cluster, precision_sources),
                score=final_confidence(combined),
            )
        )
    return nms(fused, nms_iou)
