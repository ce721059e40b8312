"""Acceptance checklist for the whole package.

Each test covers one numbered criterion (AC1..AC9) and prints a single
PASS/FAIL line with the measured numbers, so a verbose run reads as a
checklist. The statistical criteria (AC5, AC6, AC9) share one bank of
synthetic worlds: twenty seed pairs, 500 images each, four detector
profiles of very different quality. Worlds and fitted models are
memoized so each is built once per session.
"""

import time
from functools import lru_cache

import numpy as np
import pytest

from detfuse import cli
from detfuse.confidence import build_confidence_model, theoretical_precision
from detfuse.dataset import DetectionRecord, GroundTruthRecord
from detfuse.errors import TotalConflictError
from detfuse.evaluation import evaluate_detections
from detfuse.fusion import VACUOUS, MassTriple, assign_bpa, combine_all, combine_two
from detfuse.geometry import BBox
from detfuse.pipeline import build_all_models, fuse_with_method
from detfuse.synth import DetectorProfile, WorldConfig, generate_world

from oracles import (
    ap_11_naive,
    ap_all_naive,
    curve_naive,
    dempster_enumerate,
    match_naive,
)

PROFILES = (
    DetectorProfile("strong", 0.75, 2.0, 1.0, 3.0, 0.0, 1.5),
    DetectorProfile("medium", 0.60, 4.0, 1.5, 12.0, 4.0, 5.0),
    DetectorProfile("noisy", 0.45, 6.0, 3.0, 1.2, 0.4, 0.6),
    DetectorProfile("extra", 0.35, 7.0, 2.0, 5.0, 2.0, 2.5),
)
POOLS = (
    ("strong",),
    ("strong", "medium"),
    ("strong", "medium", "noisy"),
    ("strong", "medium", "noisy", "extra"),
)
POOL3 = POOLS[2]
N_IMAGES = 500
N_SEEDS = 20
SEED_BASE = 30000
N_REF = 2.0


def _verdict(name, ok, detail=""):
    line = f"{name}: {'PASS' if ok else 'FAIL'}"
    if detail:
        line += f" ({detail})"
    print(line)
    return line


@lru_cache(maxsize=None)
def _worlds(seed_index):
    def config(seed):
        return WorldConfig(
            n_images=N_IMAGES,
            categories=("widget", "gadget"),
            detectors=PROFILES,
            seed=seed,
        )

    val = generate_world(config(SEED_BASE + 2 * seed_index))
    test = generate_world(config(SEED_BASE + 2 * seed_index + 1))
    return val, test


@lru_cache(maxsize=None)
def _models(seed_index, pool):
    val, _ = _worlds(seed_index)
    return build_all_models(
        [val.dumps[d] for d in pool], val.groundtruth, n=N_REF
    )


@lru_cache(maxsize=None)
def _fused_map(seed_index, pool, method, operating_recall=None):
    _, test = _worlds(seed_index)
    fused = fuse_with_method(
        [test.dumps[d] for d in pool],
        _models(seed_index, pool),
        method,
        operating_recall=operating_recall,
    )
    return evaluate_detections(fused, test.groundtruth).map


@lru_cache(maxsize=None)
def _individual_map(seed_index, det):
    _, test = _worlds(seed_index)
    return evaluate_detections(test.dumps[det].records, test.groundtruth).map


def test_ac1_combination_matches_exhaustive_enumeration():
    rng = np.random.default_rng(2026)
    start = time.perf_counter()
    worst_combine = 0.0
    worst_permute = 0.0
    for _ in range(1000):
        k = int(rng.integers(2, 7))
        triples = []
        for _ in range(k):
            raw = rng.random(3) + 1e-4
            raw /= raw.sum()
            triples.append(MassTriple(raw[0], raw[1], raw[2]))
        try:
            ours = combine_all(triples)
        except TotalConflictError:
            pytest.fail("floored masses must never fully conflict")
        ref = dempster_enumerate([t.as_tuple() for t in triples])
        worst_combine = max(
            worst_combine,
            max(abs(a - b) for a, b in zip(ours.as_tuple(), ref)),
        )
        order = rng.permutation(k)
        permuted = combine_all([triples[i] for i in order])
        worst_permute = max(
            worst_permute,
            max(
                abs(a - b)
                for a, b in zip(ours.as_tuple(), permuted.as_tuple())
            ),
        )
    elapsed = time.perf_counter() - start
    ok = worst_combine <= 1e-9 and worst_permute <= 1e-9 and elapsed < 5.0
    line = _verdict(
        "AC1 pooled evidence matches brute-force enumeration",
        ok,
        f"max dev {worst_combine:.2e}, permutation dev {worst_permute:.2e}, "
        f"{elapsed:.2f}s",
    )
    assert ok, line


def test_ac2_assigned_masses_are_always_valid():
    rng = np.random.default_rng(99)
    truth = [
        GroundTruthRecord(f"im{k}", "c", BBox(0, 0, 10, 10)) for k in range(30)
    ]
    worst_sum = 0.0
    out_of_range = 0
    probes = 0
    for _ in range(10):
        dets = []
        for k in range(30):
            if rng.random() < 0.7:
                dets.append(
                    DetectionRecord(
                        f"im{k}", "c", BBox(0, 0, 10, 10),
                        float(rng.normal(2, 1)),
                    )
                )
            if rng.random() < 0.5:
                dets.append(
                    DetectionRecord(
                        f"im{k}", "c", BBox(40, 40, 50, 50),
                        float(rng.normal(0, 1)),
                    )
                )
        model = build_confidence_model(
            dets, truth, "d", "c",
            n=float(rng.choice([1.0, 2.0, 8.0, np.inf])),
        )
        for score in rng.uniform(-8.0, 10.0, size=1000):
            triple = model.mass_at(float(score))
            worst_sum = max(worst_sum, abs(sum(triple.as_tuple()) - 1.0))
            if not all(0.0 <= v <= 1.0 for v in triple.as_tuple()):
                out_of_range += 1
            probes += 1
        silent = assign_bpa(model, None)
        assert silent.as_tuple() == (0.0, 0.0, 1.0)
        for score in rng.uniform(-8.0, 10.0, size=5):
            m = model.mass_at(float(score))
            neutral = combine_two(m, VACUOUS)
            assert all(
                abs(a - b) <= 1e-12
                for a, b in zip(m.as_tuple(), neutral.as_tuple())
            )
    ok = probes == 10_000 and worst_sum <= 1e-9 and out_of_range == 0
    line = _verdict(
        "AC2 assigned masses are valid and silence stays vacuous",
        ok,
        f"{probes} probes, worst sum dev {worst_sum:.2e}, "
        f"{out_of_range} out of range",
    )
    assert ok, line


def _random_eval_instance(rng):
    n_gt = int(rng.integers(1, 6))
    gts = []
    n_real = 0
    for j in range(n_gt):
        x, y = rng.integers(0, 60, size=2)
        w, h = rng.integers(8, 40, size=2)
        ignore = bool(rng.random() < 0.15) if n_real or j < n_gt - 1 else False
        n_real += not ignore
        gts.append((float(x), float(y), float(x + w), float(y + h), ignore))
    dets = []
    for _ in range(int(rng.integers(0, 21))):
        if rng.random() < 0.6:
            x1, y1, x2, y2, _ = gts[int(rng.integers(len(gts)))]
            dx = rng.normal(0, 6, size=4)
            x1, x2 = sorted((x1 + dx[0], x2 + dx[1]))
            y1, y2 = sorted((y1 + dx[2], y2 + dx[3]))
            box = (x1, y1, max(x2, x1 + 1), max(y2, y1 + 1))
        else:
            x, y = rng.integers(0, 60, size=2)
            w, h = rng.integers(8, 40, size=2)
            box = (float(x), float(y), float(x + w), float(y + h))
        dets.append((round(float(rng.random()), 1), box))
    return dets, gts


def test_ac3_average_precision_matches_reference_route():
    fixture_gt = [
        GroundTruthRecord("i", "c", BBox(0, 0, 10, 10)),
        GroundTruthRecord("i", "c", BBox(100, 100, 110, 110)),
    ]
    fixture_dets = [
        DetectionRecord("i", "c", BBox(0, 0, 10, 10), 0.9),
        DetectionRecord("i", "c", BBox(50, 50, 60, 60), 0.5),
        DetectionRecord("i", "c", BBox(100, 100, 110, 110), 0.3),
    ]
    ap_all = evaluate_detections(fixture_dets, fixture_gt, ap_mode="all").map
    ap_11 = evaluate_detections(fixture_dets, fixture_gt, ap_mode="11pt").map
    fixture_ok = abs(ap_all - 5 / 6) <= 1e-6 and abs(ap_11 - 28 / 33) <= 1e-6

    rng = np.random.default_rng(4321)
    worst = 0.0
    for _ in range(200):
        raw_dets, raw_gts = _random_eval_instance(rng)
        truth = [
            GroundTruthRecord("i", "c", BBox(*g[:4]), ignore=g[4])
            for g in raw_gts
        ]
        dets = [
            DetectionRecord("i", "c", BBox(*box), score)
            for score, box in raw_dets
        ]
        n_pos = sum(1 for g in raw_gts if not g[4])
        expect = match_naive(raw_dets, [(g[:4], g[4]) for g in raw_gts], 0.5)
        recalls, precisions = curve_naive(
            [(score, e) for (score, _), e in zip(raw_dets, expect)], n_pos
        )
        got_all = evaluate_detections(dets, truth, ap_mode="all").map
        got_11 = evaluate_detections(dets, truth, ap_mode="11pt").map
        worst = max(
            worst,
            abs(got_all - ap_all_naive(recalls, precisions)),
            abs(got_11 - ap_11_naive(recalls, precisions)),
        )
    ok = fixture_ok and worst <= 1e-9
    line = _verdict(
        "AC3 average precision agrees with the brute-force route",
        ok,
        f"fixture all/11pt {ap_all:.6f}/{ap_11:.6f}, "
        f"200 random instances, max dev {worst:.2e}",
    )
    assert ok, line


def test_ac4_two_source_worked_example():
    got = combine_two(MassTriple(0.6, 0.1, 0.3), MassTriple(0.5, 0.2, 0.3))
    expected = (0.63 / 0.83, 0.11 / 0.83, 0.09 / 0.83)
    worst = max(abs(a - b) for a, b in zip(got.as_tuple(), expected))
    ok = worst <= 1e-12
    line = _verdict(
        "AC4 worked two-source combination example",
        ok,
        f"got {got.as_tuple()}, max dev {worst:.2e}",
    )
    assert ok, line


def test_ac5_fusion_beats_individual_detectors_and_baselines():
    start = time.perf_counter()
    rows = []
    for s in range(N_SEEDS):
        rows.append(
            (
                _fused_map(s, POOL3, "dbf"),
                _fused_map(s, POOL3, "platt"),
                _fused_map(s, POOL3, "ws"),
                _fused_map(s, POOL3, "bayes"),
                max(_individual_map(s, d) for d in POOL3),
            )
        )
    elapsed = time.perf_counter() - start
    arr = np.array(rows)
    wins = int((arr[:, 0] >= arr[:, 4]).sum())
    means = arr.mean(axis=0)
    ok = (
        wins >= 18
        and means[0] >= means[1]
        and means[0] >= means[2]
        and means[0] >= means[3]
        and elapsed < 60.0
    )
    line = _verdict(
        "AC5 fused run beats individual detectors and baselines",
        ok,
        f"mAP dbf {means[0]:.4f} vs platt {means[1]:.4f} / ws {means[2]:.4f} "
        f"/ bayes {means[3]:.4f}; >= best single in {wins}/{N_SEEDS}; "
        f"{elapsed:.1f}s",
    )
    assert ok, line


def test_ac6_dynamic_masses_beat_any_fixed_operating_point():
    results = {}
    for recall in (0.4, 0.5, 0.6, 0.7, 0.8):
        wins = 0
        for s in range(N_SEEDS):
            dbf = _fused_map(s, POOL3, "dbf")
            static = _fused_map(s, POOL3, "dst", recall)
            wins += dbf > static
        results[recall] = wins
    ok = all(wins >= 16 for wins in results.values())
    line = _verdict(
        "AC6 dynamic masses beat every fixed operating point",
        ok,
        "wins " + ", ".join(f"{r}: {w}/{N_SEEDS}" for r, w in results.items()),
    )
    assert ok, line


def test_ac7_reference_strength_shapes_the_doubt_term():
    monotone = True
    for r10 in range(1, 10):
        recall = r10 / 10.0
        doubts = [
            1.0 - theoretical_precision(recall, n)
            for n in (1.0, 2.0, 4.0, 8.0, 16.0, 32.0)
        ]
        monotone &= all(b < a for a, b in zip(doubts, doubts[1:]))
    limits_ok = (
        theoretical_precision(0.5, np.inf) == 1.0
        and theoretical_precision(1.0, np.inf) == 0.0
    )

    config = WorldConfig(
        n_images=50,
        categories=("widget",),
        detectors=(DetectorProfile("full", 1.0, 1.0, 1.0, 3.0, 0.0, 1.0),),
        seed=8,
    )
    world = generate_world(config)
    model = build_confidence_model(
        world.dumps["full"].records, world.groundtruth, "full", "widget",
        n=float("inf"),
    )
    partial_rows = 0
    zero_ok = True
    for row, recall in zip(model.masses, model.recalls):
        if recall < 1.0:
            partial_rows += 1
            zero_ok &= row.not_target == 0.0
        else:
            zero_ok &= abs(row.not_target - (1.0 - row.target)) <= 1e-12
    ok = monotone and limits_ok and partial_rows > 0 and zero_ok
    line = _verdict(
        "AC7 stronger references shrink doubt, infinite ones erase it",
        ok,
        f"monotone {monotone}, limits {limits_ok}, "
        f"{partial_rows} partial-recall rows all zero-doubt {zero_ok}",
    )
    assert ok, line


def _dets_args(world_dir):
    args = []
    for det in ("strong", "medium", "noisy"):
        args += ["--dets", f"{det}={world_dir / (det + '.jsonl')}"]
    return args


def test_ac8_equal_inputs_give_byte_identical_outputs(tmp_path):
    fused_bytes = []
    model_bytes = []
    for rep in ("one", "two"):
        root = tmp_path / rep
        for name, seed in (("val", 77), ("test", 78)):
            assert (
                cli.main(
                    ["synth", "--out", str(root / name), "--seed", str(seed),
                     "--n-images", "60"]
                )
                == 0
            )
        models_dir = root / "models"
        assert (
            cli.main(
                ["build-model",
                 "--gt", str(root / "val" / "groundtruth.jsonl"),
                 *_dets_args(root / "val"),
                 "--models", str(models_dir), "--n", "2",
                 "--out", str(root / "build.json")]
            )
            == 0
        )
        fused = root / "fused.jsonl"
        assert (
            cli.main(
                ["fuse", *_dets_args(root / "test"),
                 "--models", str(models_dir), "--out", str(fused)]
            )
            == 0
        )
        fused_bytes.append(fused.read_bytes())
        model_bytes.append(
            sorted((p.name, p.read_bytes()) for p in models_dir.glob("*.json"))
        )
    ok = (
        len(fused_bytes[0]) > 0
        and fused_bytes[0] == fused_bytes[1]
        and model_bytes[0] == model_bytes[1]
    )
    line = _verdict(
        "AC8 equal inputs give byte-identical models and fused output",
        ok,
        f"{len(fused_bytes[0])} fused bytes, "
        f"{len(model_bytes[0])} model files",
    )
    assert ok, line


def test_ac9_adding_detectors_never_hurts():
    means = []
    for pool in POOLS:
        means.append(
            float(np.mean([_fused_map(s, pool, "dbf") for s in range(N_SEEDS)]))
        )
    steps = [b - a for a, b in zip(means, means[1:])]
    ok = all(step >= -0.005 for step in steps)
    line = _verdict(
        "AC9 growing the detector pool never hurts fused mAP",
        ok,
        "means " + " -> ".join(f"{m:.4f}" for m in means),
    )
    assert ok, line
