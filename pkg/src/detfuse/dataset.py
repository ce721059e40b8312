"""Detection dumps and groundtruth annotations on disk.

Both formats are JSON-lines, one object per line, UTF-8:

    detection:   {"image_id": str, "category": str,
                  "bbox": [x1, y1, x2, y2], "score": float}
    groundtruth: {"image_id": str, "category": str,
                  "bbox": [x1, y1, x2, y2], "ignore": bool}   # ignore optional

Scores stay on each detector's native scale; nothing here rescales them.
Unknown keys are ignored with a warning. Groundtruth records flagged
``ignore`` never count as objects of interest, and detections matching
only ignored boxes are dropped from precision/recall accumulation.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

from .errors import DataError
from .geometry import BBox

_DETECTION_KEYS = frozenset({"image_id", "category", "bbox", "score"})
_GROUNDTRUTH_KEYS = frozenset({"image_id", "category", "bbox", "ignore"})


@dataclass(frozen=True, slots=True)
class DetectionRecord:
    """One scored detector output."""

    image_id: str
    category: str
    bbox: BBox
    score: float

    def __post_init__(self) -> None:
        if not self.image_id:
            raise ValueError("image_id must be non-empty")
        if not math.isfinite(self.score):
            raise ValueError(f"score must be finite, got {self.score!r}")


@dataclass(frozen=True, slots=True)
class GroundTruthRecord:
    """One annotated object; ignored records do not count as objects of interest."""

    image_id: str
    category: str
    bbox: BBox
    ignore: bool = False

    def __post_init__(self) -> None:
        if not self.image_id:
            raise ValueError("image_id must be non-empty")


@dataclass(frozen=True)
class DetectorDump:
    """All detections of one detector, indexed by (image_id, category)."""

    detector_id: str
    records: tuple[DetectionRecord, ...]

    @cached_property
    def by_scope(self) -> dict[tuple[str, str], list[DetectionRecord]]:
        index: dict[tuple[str, str], list[DetectionRecord]] = {}
        for rec in self.records:
            index.setdefault((rec.image_id, rec.category), []).append(rec)
        return index

    @cached_property
    def categories(self) -> tuple[str, ...]:
        return tuple(sorted({r.category for r in self.records}))

    @cached_property
    def image_ids(self) -> tuple[str, ...]:
        return tuple(sorted({r.image_id for r in self.records}))

    def scoped(self, image_id: str, category: str) -> list[DetectionRecord]:
        return self.by_scope.get((image_id, category), [])

    def restricted_to_images(self, image_ids: Iterable[str]) -> "DetectorDump":
        keep = set(image_ids)
        return DetectorDump(
            self.detector_id,
            tuple(r for r in self.records if r.image_id in keep),
        )


def _parse_bbox(value: object, where: str) -> BBox:
    if (
        not isinstance(value, list)
        or len(value) != 4
        or any(isinstance(v, bool) or not isinstance(v, (int, float)) for v in value)
    ):
        raise DataError(f"{where}: bbox must be a list of 4 numbers, got {value!r}")
    if any(not math.isfinite(float(v)) for v in value):
        raise DataError(f"{where}: bbox coordinates must be finite, got {value!r}")
    try:
        return BBox(*(float(v) for v in value))
    except ValueError as exc:
        raise DataError(f"{where}: {exc}") from exc


def _parse_str(obj: dict, key: str, where: str) -> str:
    value = obj.get(key)
    if not isinstance(value, str) or not value:
        raise DataError(f"{where}: {key!r} must be a non-empty string, got {value!r}")
    return value


def _iter_lines(path: Path) -> Iterable[tuple[int, dict]]:
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from exc
        if not isinstance(obj, dict):
            raise DataError(f"{path}:{lineno}: expected a JSON object")
        yield lineno, obj


def _warn_unknown_keys(obj: dict, known: frozenset, path: Path, seen: set) -> None:
    for key in obj.keys() - known:
        if key not in seen:
            seen.add(key)
            warnings.warn(f"{path}: ignoring unknown key {key!r}", stacklevel=3)


def load_detections(path: str | Path, detector_id: str) -> DetectorDump:
    """Parse a detection dump; order within each (image, category) group is preserved."""
    path = Path(path)
    records: list[DetectionRecord] = []
    unknown: set[str] = set()
    for lineno, obj in _iter_lines(path):
        where = f"{path}:{lineno}"
        _warn_unknown_keys(obj, _DETECTION_KEYS, path, unknown)
        score = obj.get("score")
        if isinstance(score, bool) or not isinstance(score, (int, float)):
            raise DataError(f"{where}: 'score' must be a number, got {score!r}")
        if not math.isfinite(float(score)):
            raise DataError(f"{where}: non-finite score {score!r}")
        records.append(
            DetectionRecord(
                image_id=_parse_str(obj, "image_id", where),
                category=_parse_str(obj, "category", where),
                bbox=_parse_bbox(obj.get("bbox"), where),
                score=float(score),
            )
        )
    return DetectorDump(detector_id=detector_id, records=tuple(records))


def load_groundtruth(path: str | Path) -> list[GroundTruthRecord]:
    """Parse a groundtruth file; a missing ``ignore`` key defaults to false."""
    path = Path(path)
    records: list[GroundTruthRecord] = []
    unknown: set[str] = set()
    for lineno, obj in _iter_lines(path):
        where = f"{path}:{lineno}"
        _warn_unknown_keys(obj, _GROUNDTRUTH_KEYS, path, unknown)
        ignore = obj.get("ignore", False)
        if not isinstance(ignore, bool):
            raise DataError(f"{where}: 'ignore' must be a boolean, got {ignore!r}")
        records.append(
            GroundTruthRecord(
                image_id=_parse_str(obj, "image_id", where),
                category=_parse_str(obj, "category", where),
                bbox=_parse_bbox(obj.get("bbox"), where),
                ignore=ignore,
            )
        )
    return records


def detection_line(rec: DetectionRecord) -> str:
    return json.dumps(
        {
            "image_id": rec.image_id,
            "category": rec.category,
            "bbox": list(rec.bbox.as_tuple()),
            "score": rec.score,
        }
    )


def groundtruth_line(rec: GroundTruthRecord) -> str:
    obj = {
        "image_id": rec.image_id,
        "category": rec.category,
        "bbox": list(rec.bbox.as_tuple()),
    }
    if rec.ignore:
        obj["ignore"] = True
    return json.dumps(obj)


def save_detections(records: Iterable[DetectionRecord], path: str | Path) -> None:
    Path(path).write_text(
        "".join(detection_line(r) + "\n" for r in records), encoding="utf-8"
    )


def save_groundtruth(records: Iterable[GroundTruthRecord], path: str | Path) -> None:
    Path(path).write_text(
        "".join(groundtruth_line(r) + "\n" for r in records), encoding="utf-8"
    )


@dataclass(frozen=True)
class DetectorSummary:
    detector_id: str
    n_records: int
    n_images: int
    per_category: dict[str, int]


@dataclass(frozen=True)
class RunReport:
    """Cross-checks between a set of detector dumps and one groundtruth file."""

    detectors: tuple[DetectorSummary, ...]
    gt_categories: tuple[str, ...]
    gt_n_records: int
    gt_n_ignored: int
    gt_n_images: int
    warnings: tuple[str, ...] = field(default=())

    def to_dict(self) -> dict:
        return {
            "detectors": [
                {
                    "detector_id": d.detector_id,
                    "n_records": d.n_records,
                    "n_images": d.n_images,
                    "per_category": dict(d.per_category),
                }
                for d in self.detectors
            ],
            "groundtruth": {
                "categories": list(self.gt_categories),
                "n_records": self.gt_n_records,
                "n_ignored": self.gt_n_ignored,
                "n_images": self.gt_n_images,
            },
            "warnings": list(self.warnings),
        }


def validate_run(
    dumps: Sequence[DetectorDump], gt: Sequence[GroundTruthRecord]
) -> RunReport:
    """Summarize a fusion run's inputs; duplicate detector ids are a hard error."""
    seen_ids: set[str] = set()
    for dump in dumps:
        if dump.detector_id in seen_ids:
            raise DataError(f"duplicate detector_id {dump.detector_id!r}")
        seen_ids.add(dump.detector_id)

    gt_categories = tuple(sorted({r.category for r in gt}))
    gt_images = {r.image_id for r in gt}
    notes: list[str] = []
    summaries = []
    for dump in dumps:
        counts: dict[str, int] = {}
        for rec in dump.records:
            counts[rec.category] = counts.get(rec.category, 0) + 1
        for cat in gt_categories:
            if counts.get(cat, 0) == 0:
                notes.append(
                    f"detector {dump.detector_id!r} has no detections for "
                    f"category {cat!r} present in groundtruth"
                )
        extra_images = len(set(dump.image_ids) - gt_images)
        if extra_images:
            notes.append(
                f"detector {dump.detector_id!r} covers {extra_images} image(s) "
                "absent from groundtruth"
            )
        summaries.append(
            DetectorSummary(
                detector_id=dump.detector_id,
                n_records=len(dump.records),
                n_images=len(dump.image_ids),
                per_category=dict(sorted(counts.items())),
            )
        )
    return RunReport(
        detectors=tuple(summaries),
        gt_categories=gt_categories,
        gt_n_records=len(gt),
        gt_n_ignored=sum(1 for r in gt if r.ignore),
        gt_n_images=len(gt_images),
        warnings=tuple(notes),
    )
