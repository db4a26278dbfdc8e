"""Command-line surface: staging runs, measurement dumps, metric tables,
preprocessing, phantom generation, and the loss self-test.

Exit codes: 0 success, 1 usage error, 2 validation or data error
(LungStageError), 3 unexpected internal failure.  Identical invocations on
identical inputs write byte-identical reports; no timestamps enter any
artifact.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import csv
import json
import os
import sys
from typing import Optional

import numpy as np

from . import __version__
from .errors import LengthMismatch, LungStageError, MissingFile, ParseError, ValidationError
from .ingest import load_mask, load_study
from .losses import LossInput, dice_loss, gradient_check, jaccard_loss, overlap_loss
from .measurement import measure_study
from .metrics import (DetectionImage, DetectionSet, confusion_counts, detection_eval,
                      emit_det_csv, emit_seg_csv, emit_stage_csv, seg_metrics, stage_report)
from .phantom import generate_phantom, random_phantom_spec, spec_from_dict
from .preprocess import (ClaheSpec, WindowSpec, clahe, load_hu, load_image8, resize,
                         save_image8, window_hu)
from .staging import (StagingRules, TStage, report_to_dict, rules_from_dict, stage_study)

USAGE_EXIT = 1
DATA_EXIT = 2
INTERNAL_EXIT = 3

WORKERS_ENV = "LUNGSTAGE_WORKERS"

_NUM = {"type": "number"}
_OPT_NUM = {"type": ["number", "null"]}
_BOOL = {"type": "boolean"}

REPORT_SCHEMA = {
    "$schema": "http://json-schema.org/draft-07/schema#",
    "type": "object",
    "additionalProperties": False,
    "required": ["tool", "study_id", "stage", "fired_rule", "trace", "properties",
                 "slices", "warnings", "rules"],
    "properties": {
        "tool": {
            "type": "object",
            "additionalProperties": False,
            "required": ["name", "version"],
            "properties": {"name": {"const": "lungstage"}, "version": {"type": "string"}},
        },
        "study_id": {"type": "string"},
        "stage": {"enum": ["T1", "T2", "T3", "T4"]},
        "fired_rule": {"type": "string"},
        "trace": {
            "type": "array",
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["condition", "value", "outcome"],
                "properties": {"condition": {"type": "string"}, "value": {},
                               "outcome": _BOOL},
            },
        },
        "properties": {
            "type": "object",
            "additionalProperties": False,
            "required": ["size_mm", "in_plane_max_mm", "depth_mm", "dist_lung_wall_mm",
                         "dist_mediastinum_mm", "dist_diaphragm_mm", "invades_mediastinum",
                         "invades_diaphragm", "surrounded_by_lung", "n_tumor_slices",
                         "warnings"],
            "properties": {
                "size_mm": _NUM,
                "in_plane_max_mm": _NUM,
                "depth_mm": _NUM,
                "dist_lung_wall_mm": _OPT_NUM,
                "dist_mediastinum_mm": _OPT_NUM,
                "dist_diaphragm_mm": _OPT_NUM,
                "invades_mediastinum": _BOOL,
                "invades_diaphragm": _BOOL,
                "surrounded_by_lung": _BOOL,
                "n_tumor_slices": {"type": "integer", "minimum": 1},
                "warnings": {"type": "array", "items": {"type": "string"}},
            },
        },
        "slices": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["slice_index", "tumor_diameter_mm", "dist_lung_wall_mm",
                             "dist_mediastinum_mm", "dist_diaphragm_mm", "surrounded",
                             "n_tumor_components"],
                "properties": {
                    "slice_index": {"type": "integer", "minimum": 0},
                    "tumor_diameter_mm": _OPT_NUM,
                    "dist_lung_wall_mm": _OPT_NUM,
                    "dist_mediastinum_mm": _OPT_NUM,
                    "dist_diaphragm_mm": _OPT_NUM,
                    "surrounded": {"type": ["boolean", "null"]},
                    "n_tumor_components": {"type": "integer", "minimum": 1},
                },
            },
        },
        "warnings": {"type": "array", "items": {"type": "string"}},
        "rules": {
            "type": "object",
            "additionalProperties": False,
            "required": ["t1_max_mm", "t2_max_mm", "t3_max_mm", "invasion_threshold_mm",
                         "invading_structures", "small_unsurrounded_stage"],
            "properties": {
                "t1_max_mm": _NUM,
                "t2_max_mm": _NUM,
                "t3_max_mm": _NUM,
                "invasion_threshold_mm": _NUM,
                "invading_structures": {
                    "type": "array",
                    "items": {"enum": ["mediastinum", "diaphragm", "lung_wall"]},
                },
                "small_unsurrounded_stage": {"enum": ["T1", "T2", "T3", "T4"]},
            },
        },
    },
}


def report_document(report) -> dict:
    doc = report_to_dict(report)
    doc["tool"] = {"name": "lungstage", "version": __version__}
    return doc


def report_json(report) -> str:
    return json.dumps(report_document(report), indent=2, sort_keys=True) + "\n"


# ---------------------------------------------------------------------------
# argument plumbing


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on bad usage; this surface reserves 2 for data errors."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(USAGE_EXIT, f"{self.prog}: error: {message}\n")


def _window_arg(text: str) -> WindowSpec:
    try:
        width, center = text.split(":")
        return WindowSpec(width_hu=float(width), center_hu=float(center))
    except (ValueError, LungStageError):
        raise argparse.ArgumentTypeError(
            f"expected WIDTH:CENTER (e.g. 1400:-700), got {text!r}")


def _clahe_arg(text: str) -> ClaheSpec:
    try:
        clip, grid = text.split(":")
        rows, cols = grid.lower().split("x")
        return ClaheSpec(clip_limit=float(clip), tile_grid=(int(rows), int(cols)))
    except (ValueError, LungStageError):
        raise argparse.ArgumentTypeError(
            f"expected CLIP:ROWSxCOLS (e.g. 1.0:16x16), got {text!r}")


def _resize_arg(text: str) -> tuple[int, int]:
    try:
        if "x" in text.lower():
            rows, cols = text.lower().split("x")
            dims = (int(rows), int(cols))
        else:
            dims = (int(text), int(text))
        if dims[0] < 1 or dims[1] < 1:
            raise ValueError
        return dims
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"expected SIZE or ROWSxCOLS (e.g. 256 or 256x192), got {text!r}")


def _load_json(path: str):
    if not os.path.isfile(path):
        raise MissingFile(path)
    try:
        with open(path, "r", encoding="utf-8") as fp:
            return json.load(fp)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}")


def _load_rules(path: Optional[str]) -> StagingRules:
    if path is None:
        return StagingRules()
    doc = _load_json(path)
    if not isinstance(doc, dict):
        raise ValidationError("rules", f"{path}: expected a JSON object")
    return rules_from_dict(doc)


def _worker_count(n_jobs: int) -> int:
    raw = os.environ.get(WORKERS_ENV)
    if raw is None:
        return 1
    try:
        value = int(raw)
    except ValueError:
        raise ValidationError(WORKERS_ENV, f"must be an integer, got {raw!r}")
    if value < 1:
        raise ValidationError(WORKERS_ENV, f"must be >= 1, got {value}")
    return min(value, n_jobs)


# ---------------------------------------------------------------------------
# stage / measure


def _stage_one(manifest_path: str, rules: StagingRules,
               overlay_dir: Optional[str]) -> tuple[str, str, str]:
    """Worker body: returns (study_id, stage value, report JSON text)."""
    study = load_study(manifest_path)
    report = stage_study(study, rules)
    if overlay_dir is not None:
        from .overlay import render_study_overlays
        render_study_overlays(study, overlay_dir)
    return study.manifest.study_id, report.decision.stage.value, report_json(report)


def cmd_stage(args) -> int:
    rules = _load_rules(args.rules)
    manifests = args.manifest
    multi = len(manifests) > 1
    if multi and args.out is None:
        print("error: multiple --manifest runs need --out DIRECTORY", file=sys.stderr)
        return USAGE_EXIT

    jobs = []
    workers = _worker_count(len(manifests))
    if workers > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as pool:
            futures = []
            for i, path in enumerate(manifests):
                # study_id is not known before loading; derive overlay dir from
                # the manifest stem to keep workers independent
                stem = os.path.splitext(os.path.basename(path))[0]
                sub = (os.path.join(args.overlay_dir, f"{i:03d}_{stem}")
                       if (args.overlay_dir and multi) else args.overlay_dir)
                futures.append(pool.submit(_stage_one, path, rules, sub))
            jobs = [f.result() for f in futures]
    else:
        for i, path in enumerate(manifests):
            stem = os.path.splitext(os.path.basename(path))[0]
            sub = (os.path.join(args.overlay_dir, f"{i:03d}_{stem}")
                   if (args.overlay_dir and multi) else args.overlay_dir)
            jobs.append(_stage_one(path, rules, sub))

    if not multi:
        study_id, stage, text = jobs[0]
        if args.out is None:
            sys.stdout.write(text)
        else:
            with open(args.out, "w", encoding="utf-8") as fp:
                fp.write(text)
            print(f"{study_id}: {stage} -> {args.out}")
        return 0

    os.makedirs(args.out, exist_ok=True)
    seen = {}
    for study_id, _, _ in jobs:
        if study_id in seen:
            raise ValidationError("study_id", f"duplicate study id {study_id!r} in batch")
        seen[study_id] = True
    for study_id, stage, text in jobs:
        out_path = os.path.join(args.out, f"{study_id}.json")
        with open(out_path, "w", encoding="utf-8") as fp:
            fp.write(text)
        print(f"{study_id}: {stage} -> {out_path}")
    return 0


def _csv_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _emit_measure_csv(props, slices, stream) -> None:
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(("slice_index", "tumor_diameter_mm", "dist_lung_wall_mm",
                     "dist_mediastinum_mm", "dist_diaphragm_mm", "surrounded",
                     "n_tumor_components"))
    for m in slices:
        writer.writerow([_csv_cell(v) for v in (
            m.slice_index, m.tumor_diameter_mm, m.dist_lung_wall_mm,
            m.dist_mediastinum_mm, m.dist_diaphragm_mm, m.surrounded,
            m.n_tumor_components)])
    writer.writerow(())
    writer.writerow(("size_mm", "in_plane_max_mm", "depth_mm", "dist_lung_wall_mm",
                     "dist_mediastinum_mm", "dist_diaphragm_mm", "invades_mediastinum",
                     "invades_diaphragm", "surrounded_by_lung", "n_tumor_slices"))
    writer.writerow([_csv_cell(v) for v in (
        props.size_mm, props.in_plane_max_mm, props.depth_mm, props.dist_lung_wall_mm,
        props.dist_mediastinum_mm, props.dist_diaphragm_mm, props.invades_mediastinum,
        props.invades_diaphragm, props.surrounded_by_lung, props.n_tumor_slices)])


def _open_out(path: Optional[str]):
    if path is None:
        return sys.stdout, False
    return open(path, "w", encoding="utf-8", newline=""), True


def cmd_measure(args) -> int:
    study = load_study(args.manifest)
    props, slices = measure_study(study)
    stream, owned = _open_out(args.out)
    try:
        _emit_measure_csv(props, slices, stream)
    finally:
        if owned:
            stream.close()
    return 0


# ---------------------------------------------------------------------------
# metrics


def cmd_metrics_seg(args) -> int:
    if len(args.pred) != len(args.gt):
        raise LengthMismatch(f"{len(args.pred)} --pred files vs {len(args.gt)} --gt files")
    entries = []
    total = None
    for pred_path, gt_path in zip(args.pred, args.gt):
        pred = load_mask(pred_path)
        gt = load_mask(gt_path)
        counts = confusion_counts(pred, gt)
        total = counts if total is None else type(counts)(
            tp=total.tp + counts.tp, fp=total.fp + counts.fp,
            fn=total.fn + counts.fn, tn=total.tn + counts.tn)
        label = os.path.splitext(os.path.basename(pred_path))[0]
        entries.append((label, seg_metrics(counts)))
    if len(entries) > 1:
        entries.append(("overall", seg_metrics(total)))
    stream, owned = _open_out(args.out)
    try:
        emit_seg_csv(entries, stream)
    finally:
        if owned:
            stream.close()
    return 0


def _detection_images(doc, path: str, kind: str) -> list[dict]:
    if not isinstance(doc, dict) or "images" not in doc or not isinstance(doc["images"], list):
        raise ValidationError(kind, f"{path}: expected an object with an 'images' list")
    return doc["images"]


def cmd_metrics_det(args) -> int:
    pred_images = _detection_images(_load_json(args.pred), args.pred, "pred")
    gt_images = _detection_images(_load_json(args.gt), args.gt, "gt")
    if len(pred_images) != len(gt_images):
        raise LengthMismatch(f"{len(pred_images)} prediction images vs "
                             f"{len(gt_images)} ground-truth images")
    images = []
    for p, g in zip(pred_images, gt_images):
        images.append(DetectionImage(
            gt_boxes=g.get("boxes", ()),
            pred_boxes=p.get("boxes", ()),
            scores=p.get("scores", ()),
        ))
    result = detection_eval(DetectionSet(images=tuple(images)))
    stream, owned = _open_out(args.out)
    try:
        emit_det_csv(result, stream)
    finally:
        if owned:
            stream.close()
    return 0


def _load_stages(path: str) -> list[str]:
    """Stage lists come as JSON (list or {"stages": [...]}) or CSV.

    CSV: uses the column named 'stage' when a header names one, else the last
    column; a header row whose chosen cell is not a stage label is skipped.
    """
    if path.endswith(".json"):
        doc = _load_json(path)
        values = doc.get("stages") if isinstance(doc, dict) else doc
        if not isinstance(values, list):
            raise ValidationError("stages", f"{path}: expected a list of stage labels")
        return [str(v) for v in values]
    if not os.path.isfile(path):
        raise MissingFile(path)
    with open(path, "r", encoding="utf-8", newline="") as fp:
        rows = [row for row in csv.reader(fp) if row]
    if not rows:
        raise ValidationError("stages", f"{path}: no rows")
    header = [cell.strip().lower() for cell in rows[0]]
    col = header.index("stage") if "stage" in header else len(rows[0]) - 1
    valid = {s.value for s in TStage}
    start = 0 if rows[0][col].strip() in valid else 1
    return [row[col].strip() for row in rows[start:]]


def cmd_metrics_stage(args) -> int:
    pred = _load_stages(args.pred)
    gt = _load_stages(args.gt)
    table = stage_report(pred, gt)
    stream, owned = _open_out(args.out)
    try:
        emit_stage_csv(table, stream)
    finally:
        if owned:
            stream.close()
    if args.figure is not None:
        from .overlay import render_confusion_matrix
        render_confusion_matrix(table, args.figure)
    return 0


# ---------------------------------------------------------------------------
# preprocess / phantom / losses


def cmd_preprocess(args) -> int:
    if args.window is not None:
        img = window_hu(load_hu(args.input), args.window)
    else:
        img = load_image8(args.input)
    if args.clahe is not None:
        img = clahe(img, args.clahe)
    if args.resize is not None:
        img = resize(img, args.resize)
    save_image8(img, args.out)
    h, w = img.dims
    print(f"wrote {args.out} ({h}x{w})")
    return 0


def cmd_phantom(args) -> int:
    if args.spec is not None:
        doc = _load_json(args.spec)
        if not isinstance(doc, dict):
            raise ValidationError("spec", f"{args.spec}: expected a JSON object")
        spec = spec_from_dict(doc)
    else:
        spec = random_phantom_spec(args.seed)
    rules = _load_rules(args.rules)
    _, truth = generate_phantom(spec, out_dir=args.out, rules=rules, with_truth=True)
    print(f"{spec.study_id}: stage {truth.stage.value} size {truth.size_mm:.1f} mm "
          f"-> {args.out}")
    return 0


def cmd_losses_check(args) -> int:
    y = np.array([1.0, 0.0, 1.0, 0.0])
    p = np.array([0.8, 0.2, 0.6, 0.4])
    hand = LossInput(p=p, y=y)
    expected = {"dice": 0.3000, "jaccard": 0.4615, "overlap": 0.3808}
    rng = np.random.default_rng(7)
    ok = True
    for name, fn in (("dice", dice_loss), ("jaccard", jaccard_loss),
                     ("overlap", overlap_loss)):
        value, _ = fn(hand)
        value_ok = abs(value - expected[name]) < 5e-5
        worst = 0.0
        for _ in range(25):
            pr = rng.uniform(size=(16, 16))
            yr = (rng.uniform(size=(16, 16)) < 0.5).astype(float)
            worst = max(worst, gradient_check(fn, LossInput(p=pr, y=yr)))
        grad_ok = worst < 1e-5
        ok = ok and value_ok and grad_ok
        print(f"{name}: value {value:.4f} (expected {expected[name]:.4f}) "
              f"max_rel_grad_err {worst:.3e} "
              f"[{'ok' if value_ok and grad_ok else 'FAIL'}]")
    return 0 if ok else DATA_EXIT


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="lungstage",
                     description="Rule-based lung tumor T-staging from CT "
                                 "segmentation masks.")
    parser.add_argument("--version", action="version", version=f"lungstage {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("stage", help="stage one or more studies from manifests")
    p.add_argument("--manifest", action="append", required=True,
                   help="study manifest JSON (repeatable)")
    p.add_argument("--rules", help="JSON file overriding staging rule fields")
    p.add_argument("--out", help="report file (single study) or directory (batch)")
    p.add_argument("--overlay-dir", help="render per-slice overlay PNGs here")
    p.set_defaults(func=cmd_stage)

    p = sub.add_parser("measure", help="emit per-slice measurements as CSV")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", help="CSV path (default: stdout)")
    p.set_defaults(func=cmd_measure)

    pm = sub.add_parser("metrics", help="evaluation tables")
    msub = pm.add_subparsers(dest="metrics_command", required=True)

    p = msub.add_parser("seg", help="segmentation metrics between mask PNGs")
    p.add_argument("--pred", action="append", required=True, help="predicted mask PNG "
                   "(repeatable, paired with --gt by position)")
    p.add_argument("--gt", action="append", required=True, help="ground-truth mask PNG")
    p.add_argument("--out", help="CSV path (default: stdout)")
    p.set_defaults(func=cmd_metrics_seg)

    p = msub.add_parser("det", help="detection mAP between box JSON files")
    p.add_argument("--pred", required=True, help='JSON: {"images": [{"boxes": [...], '
                   '"scores": [...]}]}')
    p.add_argument("--gt", required=True, help='JSON: {"images": [{"boxes": [...]}]}')
    p.add_argument("--out", help="CSV path (default: stdout)")
    p.set_defaults(func=cmd_metrics_det)

    p = msub.add_parser("stage", help="staging confusion table between stage lists")
    p.add_argument("--pred", required=True, help="JSON list / CSV of predicted stages")
    p.add_argument("--gt", required=True, help="JSON list / CSV of true stages")
    p.add_argument("--out", help="CSV path (default: stdout)")
    p.add_argument("--figure", help="also render the confusion matrix PNG here")
    p.set_defaults(func=cmd_metrics_stage)

    p = sub.add_parser("preprocess", help="window / equalize / resize a CT slice")
    p.add_argument("--in", dest="input", required=True,
                   help="HU input (.npy or 16-bit PNG) or 8-bit PNG when no --window")
    p.add_argument("--out", required=True, help="output 8-bit PNG")
    p.add_argument("--window", type=_window_arg, help="WIDTH:CENTER in HU, e.g. 1400:-700")
    p.add_argument("--clahe", type=_clahe_arg, help="CLIP:ROWSxCOLS, e.g. 1.0:16x16")
    p.add_argument("--resize", type=_resize_arg, help="SIZE or ROWSxCOLS, e.g. 256")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("phantom", help="generate a synthetic study with truth")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--spec", help="phantom spec JSON file")
    group.add_argument("--seed", type=int, help="derive a randomized spec from this seed")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--rules", help="JSON staging rules used for the recorded truth")
    p.set_defaults(func=cmd_phantom)

    pl = sub.add_parser("losses", help="loss function utilities")
    lsub = pl.add_subparsers(dest="losses_command", required=True)
    p = lsub.add_parser("check", help="gradient self-test against finite differences")
    p.set_defaults(func=cmd_losses_check)

    return parser


def main(argv: Optional[list] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except LungStageError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return DATA_EXIT
    except Exception as exc:  # pragma: no cover - defensive
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return INTERNAL_EXIT


if __name__ == "__main__":
    sys.exit(main())
