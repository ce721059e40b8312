"""End-to-end orchestration: fit models, pick n, fuse runs, rank output.

The unit of persisted state is a model directory holding one JSON file
per fitted model:

    dbf__<detector>__<category>.json     confidence model (mass table)
    platt__<detector>__<category>.json   sigmoid calibration
    ws__<category>.json                  weighted-sum weights
    bayes__<detector>__<category>.json   binned likelihoods

File names are informational; identity is parsed from file content.
Fused output is written in the detection dump format with the fused
confidence in the ``score`` field, sorted by image, category,
descending score, then box coordinates, so equal inputs produce
byte-identical files.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import baselines
from .baselines import BayesModel, PlattModel, WeightedSumModel
from .confidence import ConfidenceModel, StaticBpaSource, build_confidence_model
from .confidence import load_model as load_confidence_model
from .dataset import DetectionRecord, DetectorDump, GroundTruthRecord
from .errors import DataError
from .evaluation import EvalResult, evaluate_detections
from .fusion import fuse_scope

FUSION_METHODS = ("dbf", "platt", "ws", "bayes", "dst")
N_GRID = (1.0, 2.0, 4.0, 8.0, 16.0, 32.0, math.inf)
DEFAULT_N = 2.0


@dataclass(frozen=True)
class ModelSet:
    """Every fitted model for one detector pool on one validation run."""

    detector_ids: tuple[str, ...]
    categories: tuple[str, ...]
    confidence: Mapping[tuple[str, str], ConfidenceModel]
    platt: Mapping[tuple[str, str], PlattModel]
    ws: Mapping[str, WeightedSumModel]
    bayes: Mapping[tuple[str, str], BayesModel]

    def n_for(self, category: str) -> float:
        for det in self.detector_ids:
            model = self.confidence.get((det, category))
            if model is not None:
                return model.n
        raise DataError(f"no confidence model for category {category!r}")


def resolve_n(n: float | Mapping[str, float], category: str) -> float:
    if isinstance(n, Mapping):
        try:
            return n[category]
        except KeyError:
            raise DataError(f"no n configured for category {category!r}") from None
    return float(n)


def build_all_models(
    dumps: Sequence[DetectorDump],
    groundtruth: Sequence[GroundTruthRecord],
    n: float | Mapping[str, float] = DEFAULT_N,
    iou_thresh: float = 0.5,
    cluster_iou: float = 0.3,
    ws_c: float = 1.0,
    smooth_targets: bool = True,
) -> ModelSet:
    """Fit confidence models and every baseline on one validation run."""
    if not dumps:
        raise DataError("need at least one detector dump")
    categories = tuple(sorted({g.category for g in groundtruth if not g.ignore}))
    if not categories:
        raise DataError("validation groundtruth has no real objects")
    confidence: dict[tuple[str, str], ConfidenceModel] = {}
    platt: dict[tuple[str, str], PlattModel] = {}
    bayes: dict[tuple[str, str], BayesModel] = {}
    ws: dict[str, WeightedSumModel] = {}
    for cat in categories:
        for dump in dumps:
            confidence[(dump.detector_id, cat)] = build_confidence_model(
                dump.records,
                groundtruth,
                dump.detector_id,
                cat,
                n=resolve_n(n, cat),
                iou_thresh=iou_thresh,
            )
            platt[(dump.detector_id, cat)] = baselines.build_platt_model(
                dump.records,
                groundtruth,
                dump.detector_id,
                cat,
                iou_thresh=iou_thresh,
                smooth_targets=smooth_targets,
            )
            bayes[(dump.detector_id, cat)] = baselines.build_bayes_model(
                dump.records,
                groundtruth,
                dump.detector_id,
                cat,
                iou_thresh=iou_thresh,
            )
        ws[cat] = baselines.build_ws_model(
            dumps,
            groundtruth,
            [platt[(d.detector_id, cat)] for d in dumps],
            cat,
            c=ws_c,
            cluster_iou=cluster_iou,
            iou_thresh=iou_thresh,
        )
    return ModelSet(
        detector_ids=tuple(d.detector_id for d in dumps),
        categories=categories,
        confidence=confidence,
        platt=platt,
        ws=ws,
        bayes=bayes,
    )


def canonical_order(records: Sequence[DetectionRecord]) -> list[DetectionRecord]:
    return sorted(
        records,
        key=lambda r: (r.image_id, r.category, -r.score, r.bbox.as_tuple()),
    )


def fuse_with_method(
    dumps: Sequence[DetectorDump],
    models: ModelSet,
    method: str = "dbf",
    operating_recall: float | None = None,
    cluster_iou: float = 0.3,
    nms_iou: float = 0.3,
) -> list[DetectionRecord]:
    """Fuse a test run; detections in categories without models are dropped.

    ``method`` picks the fuser: dynamic evidence fusion ("dbf"), its
    fixed-operating-point variant ("dst", needs ``operating_recall``;
    detectors whose sweep never reached that recall stay vacuous), or
    one of the baselines ("platt", "ws", "bayes").
    """
    if method not in FUSION_METHODS:
        raise ValueError(f"method must be one of {FUSION_METHODS}, got {method!r}")
    if method == "dst" and operating_recall is None:
        raise ValueError("the dst method requires an operating recall")
    for dump in dumps:
        if dump.detector_id not in models.detector_ids:
            raise DataError(f"no models fitted for detector {dump.detector_id!r}")

    def conf_row(cat: str) -> list[ConfidenceModel]:
        return [models.confidence[(d.detector_id, cat)] for d in dumps]

    def platt_row(cat: str) -> list[PlattModel]:
        return [models.platt[(d.detector_id, cat)] for d in dumps]

    per_cat_fuser = {}
    for cat in models.categories:
        if method == "dbf":
            row = conf_row(cat)
            per_cat_fuser[cat] = (
                lambda per_det, row=row: fuse_scope(
                    per_det, row, row, cluster_iou, nms_iou
                )
            )
        elif method == "dst":
            row = conf_row(cat)
            static = [
                StaticBpaSource.from_model(m, operating_recall, unreachable="vacuous")
                for m in row
            ]
            per_cat_fuser[cat] = (
                lambda per_det, static=static, row=row: fuse_scope(
                    per_det, static, row, cluster_iou, nms_iou
                )
            )
        elif method == "platt":
            row = platt_row(cat)
            per_cat_fuser[cat] = (
                lambda per_det, row=row: baselines.platt_fuse_scope(
                    per_det, row, cluster_iou, nms_iou
                )
            )
        elif method == "ws":
            ws_model = models.ws.get(cat)
            if ws_model is None:
                raise DataError(f"no weighted-sum model for category {cat!r}")
            w_by_id = dict(zip(ws_model.detector_ids, ws_model.weights))
            try:
                aligned = WeightedSumModel(
                    category=cat,
                    detector_ids=tuple(d.detector_id for d in dumps),
                    weights=tuple(w_by_id[d.detector_id] for d in dumps),
                )
            except KeyError as exc:
                raise DataError(
                    f"weighted-sum model for {cat!r} lacks detector {exc}"
                ) from exc
            row = platt_row(cat)
            per_cat_fuser[cat] = (
                lambda per_det, row=row, aligned=aligned: baselines.ws_fuse_scope(
                    per_det, row, aligned, cluster_iou, nms_iou
                )
            )
        else:  # bayes
            row = [models.bayes[(d.detector_id, cat)] for d in dumps]
            per_cat_fuser[cat] = (
                lambda per_det, row=row: baselines.bayes_fuse_scope(
                    per_det, row, cluster_iou, nms_iou
                )
            )

    image_ids = sorted({img for d in dumps for img in d.image_ids})
    known = set(models.categories)
    dropped = sum(
        1 for d in dumps for r in d.records if r.category not in known
    )
    if dropped:
        warnings.warn(
            f"dropping {dropped} detection(s) in categories with no fitted models"
        )
    fused: list[DetectionRecord] = []
    for image_id in image_ids:
        for cat in models.categories:
            per_det = [d.scoped(image_id, cat) for d in dumps]
            if all(not dets for dets in per_det):
                continue
            fused.extend(per_cat_fuser[cat](per_det))
    return canonical_order(fused)


def tune_n(
    dumps: Sequence[DetectorDump],
    groundtruth: Sequence[GroundTruthRecord],
    grid: Sequence[float] = N_GRID,
    seed: int = 0,
    iou_thresh: float = 0.5,
    cluster_iou: float = 0.3,
    nms_iou: float = 0.3,
    ap_mode: str = "all",
) -> dict[str, float]:
    """Pick n per category by two-fold cross-validation on the images.

    Image ids are shuffled once (seeded), split in half, and each half
    scores models fitted on the other. The winner per category is the
    grid value with the best mean fused AP; ties go to the smaller n.
    """
    image_ids = sorted(
        {g.image_id for g in groundtruth}
        | {img for d in dumps for img in d.image_ids}
    )
    if len(image_ids) < 2:
        raise DataError("need at least two images to cross-validate n")
    perm = np.random.default_rng(seed).permutation(len(image_ids))
    shuffled = [image_ids[i] for i in perm]
    half = len(shuffled) // 2
    folds = (set(shuffled[:half]), set(shuffled[half:]))

    def restrict_gt(keep: set[str]) -> list[GroundTruthRecord]:
        return [g for g in groundtruth if g.image_id in keep]

    def restrict_dumps(keep: set[str]) -> list[DetectorDump]:
        return [d.restricted_to_images(keep) for d in dumps]

    categories = sorted({g.category for g in groundtruth if not g.ignore})
    scores: dict[str, list[float]] = {c: [] for c in categories}
    for n in grid:
        per_cat_aps: dict[str, list[float]] = {c: [] for c in categories}
        for fit_fold, eval_fold in (folds, folds[::-1]):
            models = build_all_models(
                restrict_dumps(fit_fold),
                restrict_gt(fit_fold),
                n=n,
                iou_thresh=iou_thresh,
                cluster_iou=cluster_iou,
            )
            fused = fuse_with_method(
                restrict_dumps(eval_fold),
                models,
                "dbf",
                cluster_iou=cluster_iou,
                nms_iou=nms_iou,
            )
            result = evaluate_detections(
                fused,
                restrict_gt(eval_fold),
                iou_thresh=iou_thresh,
                ap_mode=ap_mode,
            )
            for cat in categories:
                ce = result.per_category.get(cat)
                if ce is not None:
                    per_cat_aps[cat].append(ce.ap)
        for cat in categories:
            scores[cat].append(
                float(np.mean(per_cat_aps[cat])) if per_cat_aps[cat] else 0.0
            )
    chosen: dict[str, float] = {}
    for cat in categories:
        best_i = 0
        for i in range(1, len(grid)):
            if scores[cat][i] > scores[cat][best_i]:
                best_i = i
        chosen[cat] = float(grid[best_i])
    return chosen


def save_models(models: ModelSet, out_dir: str | Path) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    def emit(name: str, payload: dict) -> None:
        path = out / name
        path.write_text(json.dumps(payload, indent=1), encoding="utf-8")
        written.append(path)

    for (det, cat), model in sorted(models.confidence.items()):
        emit(f"dbf__{det}__{cat}.json", model.to_dict())
    for (det, cat), platt in sorted(models.platt.items()):
        emit(f"platt__{det}__{cat}.json", platt.to_dict())
    for cat, ws in sorted(models.ws.items()):
        emit(f"ws__{cat}.json", ws.to_dict())
    for (det, cat), bayes_model in sorted(models.bayes.items()):
        emit(f"bayes__{det}__{cat}.json", bayes_model.to_dict())
    return written


def load_models(models_dir: str | Path) -> ModelSet:
    """Rebuild a ModelSet from a model directory written by save_models."""
    root = Path(models_dir)
    if not root.is_dir():
        raise DataError(f"model directory {root} does not exist")
    confidence: dict[tuple[str, str], ConfidenceModel] = {}
    platt: dict[tuple[str, str], PlattModel] = {}
    ws: dict[str, WeightedSumModel] = {}
    bayes: dict[tuple[str, str], BayesModel] = {}
    for path in sorted(root.glob("*.json")):
        kind = path.name.split("__", 1)[0]
        if kind == "dbf":
            model = load_confidence_model(path)
            confidence[(model.detector_id, model.category)] = model
        elif kind in ("platt", "ws", "bayes"):
            try:
                obj = json.loads(path.read_text(encoding="utf-8"))
            except (OSError, json.JSONDecodeError) as exc:
                raise DataError(f"cannot read {path}: {exc}") from exc
            if kind == "platt":
                p = PlattModel.from_dict(obj)
                platt[(p.detector_id, p.category)] = p
            elif kind == "ws":
                w = WeightedSumModel.from_dict(obj)
                ws[w.category] = w
            else:
                b = BayesModel.from_dict(obj)
                bayes[(b.detector_id, b.category)] = b
    if not confidence:
        raise DataError(f"no confidence models found under {root}")
    detector_ids = tuple(sorted({det for det, _ in confidence}))
    categories = tuple(sorted({cat for _, cat in confidence}))
    return ModelSet(
        detector_ids=detector_ids,
        categories=categories,
        confidence=confidence,
        platt=platt,
        ws=ws,
        bayes=bayes,
    )


def evaluate_dump(
    dump: DetectorDump,
    groundtruth: Sequence[GroundTruthRecord],
    iou_thresh: float = 0.5,
    ap_mode: str = "all",
) -> EvalResult:
    return evaluate_detections(
        dump.records, groundtruth, iou_thresh=iou_thresh, ap_mode=ap_mode
    )
