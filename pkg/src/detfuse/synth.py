"""Synthetic detection worlds with controllable detector quality.

A world is a set of images with random groundtruth boxes plus, for each
configured detector profile, a detection dump correlated with that
groundtruth: every object fires with probability ``recall_rate`` at a
jittered location, and clutter arrives per image at rate
``fp_per_image``. True and false detections draw scores from separate
normal distributions, so score separation (and with it the detector's
achievable precision) is explicit in the profile.

Everything is drawn from one ``numpy`` generator in a fixed order
(groundtruth first, then each profile in turn), so a config and seed
pin the exact output bytes. Appending a new profile never changes the
records generated for earlier ones.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataset import (
    DetectorDump,
    DetectionRecord,
    GroundTruthRecord,
    save_detections,
    save_groundtruth,
)
from .errors import DataError
from .geometry import BBox


@dataclass(frozen=True, slots=True)
class DetectorProfile:
    detector_id: str
    recall_rate: float  # chance of firing on a real object
    loc_sigma: float  # box corner jitter, pixels
    fp_per_image: float  # Poisson rate of clutter detections
    tp_score_mean: float
    fp_score_mean: float
    score_sigma: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.recall_rate <= 1.0:
            raise ValueError(f"recall_rate must lie in [0, 1], got {self.recall_rate!r}")
        if self.loc_sigma < 0 or self.fp_per_image < 0 or self.score_sigma <= 0:
            raise ValueError("sigma and rate parameters must be positive")

    def to_dict(self) -> dict:
        return {
            "detector_id": self.detector_id,
            "recall_rate": self.recall_rate,
            "loc_sigma": self.loc_sigma,
            "fp_per_image": self.fp_per_image,
            "tp_score_mean": self.tp_score_mean,
            "fp_score_mean": self.fp_score_mean,
            "score_sigma": self.score_sigma,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "DetectorProfile":
        return cls(**{k: obj[k] for k in (
            "detector_id", "recall_rate", "loc_sigma", "fp_per_image",
            "tp_score_mean", "fp_score_mean", "score_sigma",
        )})


@dataclass(frozen=True, slots=True)
class WorldConfig:
    n_images: int
    categories: tuple[str, ...]
    detectors: tuple[DetectorProfile, ...]
    objects_per_image: tuple[int, int] = (1, 3)
    image_size: tuple[float, float] = (640.0, 480.0)
    box_size_range: tuple[float, float] = (32.0, 128.0)
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_images <= 0:
            raise ValueError("n_images must be positive")
        if not self.categories or not self.detectors:
            raise ValueError("need at least one category and one detector")
        lo, hi = self.objects_per_image
        if lo < 0 or hi < lo:
            raise ValueError("objects_per_image must be a valid range")

    def to_dict(self) -> dict:
        return {
            "n_images": self.n_images,
            "categories": list(self.categories),
            "detectors": [p.to_dict() for p in self.detectors],
            "objects_per_image": list(self.objects_per_image),
            "image_size": list(self.image_size),
            "box_size_range": list(self.box_size_range),
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "WorldConfig":
        try:
            return cls(
                n_images=int(obj["n_images"]),
                categories=tuple(str(c) for c in obj["categories"]),
                detectors=tuple(
                    DetectorProfile.from_dict(p) for p in obj["detectors"]
                ),
                objects_per_image=tuple(obj.get("objects_per_image", (1, 3))),
                image_size=tuple(obj.get("image_size", (640.0, 480.0))),
                box_size_range=tuple(obj.get("box_size_range", (32.0, 128.0))),
                seed=int(obj.get("seed", 0)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"malformed world config: {exc}") from exc


@dataclass(frozen=True)
class World:
    config: WorldConfig
    groundtruth: list[GroundTruthRecord] = field(repr=False)
    dumps: dict[str, DetectorDump] = field(repr=False)

    @property
    def image_ids(self) -> list[str]:
        return [f"img_{i:05d}" for i in range(self.config.n_images)]


def _random_box(rng: np.random.Generator, config: WorldConfig) -> BBox:
    width, height = config.image_size
    s_lo, s_hi = config.box_size_range
    w = rng.uniform(s_lo, s_hi)
    h = rng.uniform(s_lo, s_hi)
    x1 = rng.uniform(0.0, width - w)
    y1 = rng.uniform(0.0, height - h)
    return BBox(x1, y1, x1 + w, y1 + h)


def _jittered_box(
    rng: np.random.Generator, box: BBox, sigma: float, config: WorldConfig
) -> BBox:
    width, height = config.image_size
    px = box.as_tuple() + rng.normal(0.0, sigma, size=4)
    x_lo, x_hi = sorted((px[0], px[2]))
    y_lo, y_hi = sorted((px[1], px[3]))
    # clamp into the image while guaranteeing a 1px minimum extent
    x1 = min(max(x_lo, 0.0), width - 1.0)
    y1 = min(max(y_lo, 0.0), height - 1.0)
    x2 = min(max(x_hi, x1 + 1.0), width)
    y2 = min(max(y_hi, y1 + 1.0), height)
    return BBox(x1, y1, x2, y2)


def generate_world(config: WorldConfig) -> World:
    """Draw groundtruth and one dump per profile, reproducibly."""
    rng = np.random.default_rng(config.seed)
    image_ids = [f"img_{i:05d}" for i in range(config.n_images)]
    lo, hi = config.objects_per_image

    groundtruth: list[GroundTruthRecord] = []
    per_image_gt: list[list[GroundTruthRecord]] = []
    for image_id in image_ids:
        n_obj = int(rng.integers(lo, hi + 1))
        objs = [
            GroundTruthRecord(
                image_id=image_id,
                category=config.categories[int(rng.integers(len(config.categories)))],
                bbox=_random_box(rng, config),
            )
            for _ in range(n_obj)
        ]
        per_image_gt.append(objs)
        groundtruth.extend(objs)

    dumps: dict[str, DetectorDump] = {}
    for profile in config.detectors:
        records: list[DetectionRecord] = []
        for image_id, objs in zip(image_ids, per_image_gt):
            for obj in objs:
                if rng.uniform() >= profile.recall_rate:
                    continue
                records.append(
                    DetectionRecord(
                        image_id=image_id,
                        category=obj.category,
                        bbox=_jittered_box(rng, obj.bbox, profile.loc_sigma, config),
                        score=float(
                            rng.normal(profile.tp_score_mean, profile.score_sigma)
                        ),
                    )
                )
            for _ in range(int(rng.poisson(profile.fp_per_image))):
                records.append(
                    DetectionRecord(
                        image_id=image_id,
                        category=config.categories[
                            int(rng.integers(len(config.categories)))
                        ],
                        bbox=_random_box(rng, config),
                        score=float(
                            rng.normal(profile.fp_score_mean, profile.score_sigma)
                        ),
                    )
                )
        dumps[profile.detector_id] = DetectorDump(
            detector_id=profile.detector_id, records=tuple(records)
        )
    return World(config=config, groundtruth=groundtruth, dumps=dumps)


def demo_config(seed: int = 0, n_images: int = 100) -> WorldConfig:
    """A small three-detector world for smoke runs and documentation."""
    return WorldConfig(
        n_images=n_images,
        categories=("widget", "gadget"),
        detectors=(
            DetectorProfile("strong", 0.75, 2.0, 1.0, 3.0, 0.0, 1.5),
            DetectorProfile("medium", 0.60, 4.0, 1.5, 12.0, 4.0, 5.0),
            DetectorProfile("noisy", 0.45, 6.0, 3.0, 1.2, 0.4, 0.6),
        ),
        seed=seed,
    )


def write_world(world: World, out_dir: str | Path) -> dict[str, Path]:
    """Write groundtruth.jsonl plus one <detector_id>.jsonl per profile."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths: dict[str, Path] = {}
    gt_path = out / "groundtruth.jsonl"
    save_groundtruth(world.groundtruth, gt_path)
    paths["groundtruth"] = gt_path
    for detector_id, dump in world.dumps.items():
        path = out / f"{detector_id}.jsonl"
        save_detections(dump.records, path)
        paths[detector_id] = path
    config_path = out / "world.json"
    config_path.write_text(
        json.dumps(world.config.to_dict(), indent=1), encoding="utf-8"
    )
    paths["config"] = config_path
    return paths


def load_world_config(path: str | Path) -> WorldConfig:
    path = Path(path)
    try:
        obj = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON ({exc.msg})") from exc
    if not isinstance(obj, dict):
        raise DataError(f"{path}: expected a JSON object")
    return WorldConfig.from_dict(obj)
