"""Command line front end.

Subcommands cover the whole workflow: generate a synthetic world
(synth), sanity-check inputs (report), evaluate raw or fused dumps
(eval), fit models on validation data (build-model, tune-n), and fuse a
test run (fuse).

Exit codes: 0 on success, 1 for usage errors, 2 for bad input data,
3 when a numerical routine fails.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import sys
from pathlib import Path

from .dataset import (
    DetectorDump,
    detection_line,
    load_detections,
    load_groundtruth,
    validate_run,
)
from .errors import DataError, NumericalError
from .evaluation import AP_MODES
from .pipeline import (
    FUSION_METHODS,
    build_all_models,
    evaluate_dump,
    fuse_with_method,
    load_models,
    save_models,
    tune_n,
)
from .synth import demo_config, generate_world, load_world_config, write_world


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # type: ignore[override]
        raise UsageError(f"{self.prog}: {message}")


def _parse_dets(pairs: list[str]) -> list[tuple[str, Path]]:
    out: list[tuple[str, Path]] = []
    seen: set[str] = set()
    for pair in pairs:
        det_id, sep, path = pair.partition("=")
        if not sep or not det_id or not path:
            raise UsageError(f"--dets expects <id>=<path>, got {pair!r}")
        if det_id in seen:
            raise UsageError(f"duplicate detector id {det_id!r}")
        seen.add(det_id)
        out.append((det_id, Path(path)))
    return out


def _load_dumps(pairs: list[str]) -> list[DetectorDump]:
    # parse every pair up front so syntax problems outrank missing files
    parsed = _parse_dets(pairs)
    return [load_detections(path, det_id) for det_id, path in parsed]


def _parse_n(text: str) -> float | None:
    if text == "auto":
        return None
    if text.lower() in ("inf", "infinity"):
        return math.inf
    try:
        value = float(text)
    except ValueError:
        raise UsageError(f"--n expects a number, 'inf', or 'auto', got {text!r}")
    if value < 1.0:
        raise UsageError(f"--n must be >= 1, got {value}")
    return value


def _emit(obj: dict, out: str | None) -> None:
    text = json.dumps(obj, indent=2)
    if out:
        Path(out).write_text(text + "\n", encoding="utf-8")
    else:
        print(text)


def _write_detections(records, out: str | None) -> None:
    lines = "".join(detection_line(r) + "\n" for r in records)
    if out:
        Path(out).write_text(lines, encoding="utf-8")
    else:
        sys.stdout.write(lines)


def cmd_eval(args: argparse.Namespace) -> int:
    dumps = _load_dumps(args.dets)
    gt = load_groundtruth(args.gt)
    results = {}
    for dump in dumps:
        result = evaluate_dump(
            dump, gt, iou_thresh=args.match_iou, ap_mode=args.ap_mode
        )
        results[dump.detector_id] = result.to_dict()
    _emit({"detectors": results}, args.out)
    return 0


def cmd_report(args: argparse.Namespace) -> int:
    dumps = _load_dumps(args.dets)
    report = validate_run(dumps, load_groundtruth(args.gt))
    _emit(report.to_dict(), args.out)
    return 0


def cmd_tune_n(args: argparse.Namespace) -> int:
    dumps = _load_dumps(args.dets)
    gt = load_groundtruth(args.gt)
    chosen = tune_n(
        dumps,
        gt,
        seed=args.seed,
        iou_thresh=args.match_iou,
        cluster_iou=args.cluster_iou,
        nms_iou=args.nms_iou,
        ap_mode=args.ap_mode,
    )
    _emit({"n": chosen}, args.out)
    return 0


def cmd_build_model(args: argparse.Namespace) -> int:
    dumps = _load_dumps(args.dets)
    gt = load_groundtruth(args.gt)
    n = _parse_n(args.n)
    tuned: dict[str, float] | None = None
    if n is None:
        tuned = tune_n(
            dumps,
            gt,
            seed=args.seed,
            iou_thresh=args.match_iou,
            cluster_iou=args.cluster_iou,
            nms_iou=args.nms_iou,
            ap_mode=args.ap_mode,
        )
    models = build_all_models(
        dumps,
        gt,
        n=tuned if tuned is not None else n,
        iou_thresh=args.match_iou,
        cluster_iou=args.cluster_iou,
        ws_c=args.ws_c,
    )
    written = save_models(models, args.models)
    _emit(
        {
            "models_dir": str(args.models),
            "files": len(written),
            "n": tuned if tuned is not None else {c: n for c in models.categories},
        },
        args.out,
    )
    return 0


def cmd_fuse(args: argparse.Namespace) -> int:
    if args.method == "dst" and args.dst_recall is None:
        raise UsageError("--method dst requires --dst-recall")
    dumps = _load_dumps(args.dets)
    models = load_models(args.models)
    fused = fuse_with_method(
        dumps,
        models,
        method=args.method,
        operating_recall=args.dst_recall,
        cluster_iou=args.cluster_iou,
        nms_iou=args.nms_iou,
    )
    _write_detections(fused, args.out)
    return 0


def cmd_synth(args: argparse.Namespace) -> int:
    if args.config:
        config = load_world_config(args.config)
        if args.seed is not None:
            config = dataclasses.replace(config, seed=args.seed)
        if args.n_images is not None:
            config = dataclasses.replace(config, n_images=args.n_images)
    else:
        config = demo_config(
            seed=args.seed if args.seed is not None else 0,
            n_images=args.n_images if args.n_images is not None else 100,
        )
    paths = write_world(generate_world(config), args.out)
    _emit({name: str(path) for name, path in sorted(paths.items())}, None)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="detfuse",
        description="Fuse and evaluate object detector outputs.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p: argparse.ArgumentParser, gt: bool = True) -> None:
        if gt:
            p.add_argument("--gt", required=True, help="groundtruth JSONL file")
        p.add_argument(
            "--dets",
            action="append",
            required=True,
            metavar="ID=PATH",
            help="detector dump as <id>=<path>; repeat per detector",
        )
        p.add_argument("--out", default=None, help="write output here (default stdout)")

    def add_eval_knobs(p: argparse.ArgumentParser) -> None:
        p.add_argument("--ap-mode", choices=AP_MODES, default="all")
        p.add_argument("--match-iou", type=float, default=0.5)

    def add_fuse_knobs(p: argparse.ArgumentParser) -> None:
        p.add_argument("--cluster-iou", type=float, default=0.3)
        p.add_argument("--nms-iou", type=float, default=0.3)

    p = sub.add_parser("eval", help="evaluate detection dumps against groundtruth")
    add_common(p)
    add_eval_knobs(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", help="cross-check dumps and groundtruth")
    add_common(p)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("tune-n", help="pick n per category by cross-validation")
    add_common(p)
    add_eval_knobs(p)
    add_fuse_knobs(p)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_tune_n)

    p = sub.add_parser("build-model", help="fit all models on a validation run")
    add_common(p)
    add_eval_knobs(p)
    add_fuse_knobs(p)
    p.add_argument("--models", required=True, help="output model directory")
    p.add_argument(
        "--n",
        default="auto",
        help="reference strength: a number >= 1, 'inf', or 'auto' to tune",
    )
    p.add_argument("--ws-c", type=float, default=1.0, help="hinge loss C")
    p.add_argument("--seed", type=int, default=0, help="cross-validation split seed")
    p.set_defaults(func=cmd_build_model)

    p = sub.add_parser("fuse", help="fuse detection dumps with fitted models")
    add_common(p, gt=False)
    add_fuse_knobs(p)
    p.add_argument("--models", required=True, help="model directory to load")
    p.add_argument("--method", choices=FUSION_METHODS, default="dbf")
    p.add_argument(
        "--dst-recall",
        type=float,
        default=None,
        help="operating recall for --method dst",
    )
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("synth", help="generate a synthetic world")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--n-images", type=int, default=None)
    p.add_argument("--config", default=None, help="world config JSON")
    p.set_defaults(func=cmd_synth)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
