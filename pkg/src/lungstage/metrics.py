"""Evaluation suite: pixel overlap metrics, detection AP, stage reports.

Pixelwise metrics follow the usual confusion-count formulas.  Ratios with a
zero denominator use the empty-vs-empty convention: 1.0 when the compared
operands are both empty (perfect agreement), 0.0 otherwise.  The printed
false-negative-rate formula upstream of this module is treated as the
identity FNR = FN / (TP + FN); the implementation keeps fnr = 1 - sensitivity
and fpr = 1 - specificity exact.

Detection evaluation is COCO-flavored: greedy per-image matching at each IoU
threshold, a global precision-recall curve over all predictions sorted by
descending confidence, and 101-point interpolated average precision with the
precision envelope.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import DegenerateBox, DimsMismatch, EmptyInput, LengthMismatch, ValidationError
from .geometry import box_iou
from .staging import TStage

# written as fractions of integers so comparisons against computed IoU ratios
# hit the same floating-point values
DEFAULT_IOU_THRESHOLDS = tuple((50 + 5 * i) / 100 for i in range(10))


# ---------------------------------------------------------------------------
# segmentation metrics


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int

    def __post_init__(self):
        for name in ("tp", "fp", "fn", "tn"):
            if getattr(self, name) < 0:
                raise ValidationError(name, "counts must be >= 0")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


@dataclass(frozen=True)
class SegMetrics:
    iou: float
    dsc: float
    accuracy: float
    precision: float
    sensitivity: float
    specificity: float
    fnr: float
    fpr: float


def _bits_of(mask) -> np.ndarray:
    bits = getattr(mask, "bits", mask)
    return np.asarray(bits, dtype=bool)


def confusion_counts(pred, gt) -> ConfusionCounts:
    """Pixelwise confusion tallies between a predicted and a reference mask."""
    p = _bits_of(pred)
    g = _bits_of(gt)
    if p.shape != g.shape:
        raise DimsMismatch(f"mask dims differ: {p.shape} vs {g.shape}")
    tp = int(np.count_nonzero(p & g))
    fp = int(np.count_nonzero(p & ~g))
    fn = int(np.count_nonzero(~p & g))
    tn = int(np.count_nonzero(~p & ~g))
    return ConfusionCounts(tp=tp, fp=fp, fn=fn, tn=tn)


def _ratio(num: int, den: int, other_side_empty: bool) -> float:
    if den == 0:
        return 1.0 if other_side_empty else 0.0
    return num / den


def seg_metrics(c: ConfusionCounts) -> SegMetrics:
    """Overlap metric bundle from confusion counts.

    fnr and fpr are computed as complements of sensitivity and specificity so
    the identities hold exactly, convention cases included.
    """
    iou = _ratio(c.tp, c.tp + c.fp + c.fn, True)
    dsc = _ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn, True)
    accuracy = _ratio(c.tp + c.tn, c.total, True)
    precision = _ratio(c.tp, c.tp + c.fp, c.fn == 0)
    sensitivity = _ratio(c.tp, c.tp + c.fn, c.fp == 0)
    specificity = _ratio(c.tn, c.tn + c.fp, c.fn == 0)
    return SegMetrics(
        iou=iou,
        dsc=dsc,
        accuracy=accuracy,
        precision=precision,
        sensitivity=sensitivity,
        specificity=specificity,
        fnr=1.0 - sensitivity,
        fpr=1.0 - specificity,
    )


def f1(precision: float, recall: float) -> float:
    """Harmonic mean of precision and recall; 0 when both are 0."""
    for name, v in (("precision", precision), ("recall", recall)):
        if not (0.0 <= v <= 1.0):
            raise ValidationError(name, f"must lie in [0, 1], got {v}")
    if precision + recall == 0.0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


# ---------------------------------------------------------------------------
# detection evaluation


@dataclass(frozen=True)
class DetectionImage:
    """Ground truth and scored predictions for one image."""

    gt_boxes: tuple = ()
    pred_boxes: tuple = ()
    scores: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "gt_boxes", tuple(tuple(map(float, b)) for b in self.gt_boxes))
        object.__setattr__(self, "pred_boxes", tuple(tuple(map(float, b)) for b in self.pred_boxes))
        object.__setattr__(self, "scores", tuple(float(s) for s in self.scores))
        if len(self.pred_boxes) != len(self.scores):
            raise LengthMismatch(
                f"{len(self.pred_boxes)} predictions vs {len(self.scores)} scores")
        for s in self.scores:
            if not (0.0 <= s <= 1.0):
                raise ValidationError("scores", f"must lie in [0, 1], got {s}")
        for b in self.gt_boxes + self.pred_boxes:
            if b[2] < b[0] or b[3] < b[1]:
                raise DegenerateBox(f"box max < min: {b}")


@dataclass(frozen=True)
class DetectionSet:
    images: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "images", tuple(self.images))

    @property
    def n_gt(self) -> int:
        return sum(len(im.gt_boxes) for im in self.images)

    @property
    def n_pred(self) -> int:
        return sum(len(im.pred_boxes) for im in self.images)


@dataclass(frozen=True)
class DetectionEval:
    """AP per threshold plus the headline aggregates.

    precision and recall count every prediction (no score cutoff) at the
    lowest evaluated threshold, 0.5 under the default grid.  All fields are
    None when the set has no ground-truth boxes.
    """

    thresholds: tuple
    ap_per_threshold: tuple  # same order as thresholds; None entries when undefined
    map50: Optional[float]
    map50_95: Optional[float]
    precision: Optional[float]
    recall: Optional[float]
    n_images: int
    n_gt: int
    n_pred: int


def _greedy_match_flags(image: DetectionImage, threshold: float) -> list[bool]:
    """Per-prediction hit flags, in descending-score (ties: index) order.

    Each prediction takes the unmatched ground-truth box of highest IoU at or
    above the threshold; IoU ties go to the lowest ground-truth index.
    """
    order = sorted(range(len(image.pred_boxes)), key=lambda i: (-image.scores[i], i))
    taken = [False] * len(image.gt_boxes)
    flags = []
    for i in order:
        best_iou = -1.0
        best_j = -1
        for j, gt in enumerate(image.gt_boxes):
            if taken[j]:
                continue
            iou = box_iou(image.pred_boxes[i], gt)
            if iou > best_iou:
                best_iou = iou
                best_j = j
        if best_j >= 0 and best_iou >= threshold:
            taken[best_j] = True
            flags.append(True)
        else:
            flags.append(False)
    return flags


def _ap_from_flags(scored_flags: list[tuple[float, int, int, bool]], n_gt: int) -> float:
    """101-point interpolated AP from globally sorted prediction outcomes."""
    if not scored_flags:
        return 0.0
    flags = np.array([f for (_, _, _, f) in scored_flags], dtype=bool)
    tp_cum = np.cumsum(flags)
    ranks = np.arange(1, flags.size + 1)
    precisions = tp_cum / ranks
    recalls = tp_cum / n_gt
    envelope = np.maximum.accumulate(precisions[::-1])[::-1]
    total = 0.0
    for q in np.linspace(0.0, 1.0, 101):
        idx = int(np.searchsorted(recalls, q, side="left"))
        if idx < recalls.size:
            total += float(envelope[idx])
    return total / 101.0


def detection_eval(detections: DetectionSet,
                   iou_thresholds: Sequence[float] = DEFAULT_IOU_THRESHOLDS) -> DetectionEval:
    """Evaluate scored box predictions against ground truth.

    Matching is greedy per image (see _greedy_match_flags); the global
    precision-recall curve sorts all predictions by (descending score, image
    index, prediction index) so results are deterministic under score ties.
    """
    thresholds = tuple(float(t) for t in iou_thresholds)
    if not thresholds:
        raise EmptyInput("no IoU thresholds")
    for t in thresholds:
        if not (0.0 < t <= 1.0):
            raise ValidationError("iou_thresholds", f"must lie in (0, 1], got {t}")

    n_gt = detections.n_gt
    n_pred = detections.n_pred
    n_images = len(detections.images)
    if n_gt == 0:
        return DetectionEval(thresholds=thresholds,
                             ap_per_threshold=tuple(None for _ in thresholds),
                             map50=None, map50_95=None, precision=None, recall=None,
                             n_images=n_images, n_gt=0, n_pred=n_pred)

    aps = []
    pr_at_lowest: tuple[Optional[float], Optional[float]] = (None, None)
    lowest = min(thresholds)
    for t in thresholds:
        scored: list[tuple[float, int, int, bool]] = []
        for img_idx, image in enumerate(detections.images):
            order = sorted(range(len(image.pred_boxes)),
                           key=lambda i: (-image.scores[i], i))
            flags = _greedy_match_flags(image, t)
            for pred_idx, flag in zip(order, flags):
                scored.append((image.scores[pred_idx], img_idx, pred_idx, flag))
        scored.sort(key=lambda rec: (-rec[0], rec[1], rec[2]))
        aps.append(_ap_from_flags(scored, n_gt))
        if t == lowest:
            tp = sum(1 for rec in scored if rec[3])
            prec = tp / n_pred if n_pred else (1.0 if n_gt == 0 else 0.0)
            rec = tp / n_gt
            pr_at_lowest = (prec, rec)

    ap_by_t = dict(zip(thresholds, aps))
    return DetectionEval(
        thresholds=thresholds,
        ap_per_threshold=tuple(aps),
        map50=ap_by_t.get(0.5),
        map50_95=float(np.mean(aps)),
        precision=pr_at_lowest[0],
        recall=pr_at_lowest[1],
        n_images=n_images,
        n_gt=n_gt,
        n_pred=n_pred,
    )


# ---------------------------------------------------------------------------
# stage classification report


_STAGE_ORDER = (TStage.T1, TStage.T2, TStage.T3, TStage.T4)


@dataclass(frozen=True, eq=False)
class StageReportTable:
    classes: tuple
    confusion: np.ndarray  # rows: ground truth, cols: prediction
    precision: dict
    recall: dict
    f1: dict
    support: dict  # ground-truth count per class
    accuracy: float


def _as_stage(value) -> TStage:
    if isinstance(value, TStage):
        return value
    try:
        return TStage(str(value))
    except ValueError:
        raise ValidationError("stage", f"unknown stage label {value!r}")


def stage_report(pred_stages: Sequence, gt_stages: Sequence) -> StageReportTable:
    """Confusion matrix and per-class precision/recall/F1 for stage labels."""
    if len(pred_stages) != len(gt_stages):
        raise LengthMismatch(f"{len(pred_stages)} predictions vs {len(gt_stages)} references")
    if len(pred_stages) == 0:
        raise EmptyInput("no stage pairs to evaluate")
    preds = [_as_stage(s) for s in pred_stages]
    gts = [_as_stage(s) for s in gt_stages]
    index = {stage: i for i, stage in enumerate(_STAGE_ORDER)}
    cm = np.zeros((4, 4), dtype=int)
    for p, g in zip(preds, gts):
        cm[index[g], index[p]] += 1

    classes = tuple(s.value for s in _STAGE_ORDER)
    precision: dict = {}
    recall: dict = {}
    f1_scores: dict = {}
    support: dict = {}
    for i, name in enumerate(classes):
        col = int(cm[:, i].sum())
        row = int(cm[i, :].sum())
        diag = int(cm[i, i])
        precision[name] = diag / col if col else 0.0
        recall[name] = diag / row if row else 0.0
        f1_scores[name] = f1(precision[name], recall[name])
        support[name] = row
    accuracy = float(np.trace(cm)) / float(cm.sum())
    return StageReportTable(classes=classes, confusion=cm, precision=precision,
                            recall=recall, f1=f1_scores, support=support,
                            accuracy=accuracy)


# ---------------------------------------------------------------------------
# emitters: CSV and JSON views, rounded to 4 decimals at emission only


_SEG_FIELDS = ("iou", "dsc", "accuracy", "precision", "sensitivity",
               "specificity", "fnr", "fpr")


def _fmt(x: Optional[float]) -> str:
    return "" if x is None else f"{x:.4f}"


def seg_table_rows(entries: Sequence[tuple[str, SegMetrics]]) -> list[dict]:
    rows = []
    for label, m in entries:
        row = {"label": label}
        row.update({name: round(getattr(m, name), 4) for name in _SEG_FIELDS})
        rows.append(row)
    return rows


def emit_seg_csv(entries: Sequence[tuple[str, SegMetrics]], stream) -> None:
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(("label",) + _SEG_FIELDS)
    for label, m in entries:
        writer.writerow([label] + [_fmt(getattr(m, name)) for name in _SEG_FIELDS])


def seg_table_json(entries: Sequence[tuple[str, SegMetrics]]) -> str:
    return json.dumps({"segmentation": seg_table_rows(entries)}, indent=2, sort_keys=True)


def det_eval_dict(result: DetectionEval) -> dict:
    return {
        "thresholds": [round(t, 2) for t in result.thresholds],
        "ap_per_threshold": [None if a is None else round(a, 4)
                             for a in result.ap_per_threshold],
        "mAP50": None if result.map50 is None else round(result.map50, 4),
        "mAP50_95": None if result.map50_95 is None else round(result.map50_95, 4),
        "precision": None if result.precision is None else round(result.precision, 4),
        "recall": None if result.recall is None else round(result.recall, 4),
        "n_images": result.n_images,
        "n_gt": result.n_gt,
        "n_pred": result.n_pred,
    }


def emit_det_csv(result: DetectionEval, stream) -> None:
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(("iou_threshold", "ap"))
    for t, a in zip(result.thresholds, result.ap_per_threshold):
        writer.writerow((f"{t:.2f}", _fmt(a)))
    writer.writerow(())
    writer.writerow(("mAP50", "mAP50_95", "precision", "recall", "n_images", "n_gt", "n_pred"))
    writer.writerow((_fmt(result.map50), _fmt(result.map50_95), _fmt(result.precision),
                     _fmt(result.recall), result.n_images, result.n_gt, result.n_pred))


def stage_table_dict(table: StageReportTable) -> dict:
    return {
        "classes": list(table.classes),
        "confusion": table.confusion.tolist(),
        "per_class": {
            name: {
                "precision": round(table.precision[name], 4),
                "recall": round(table.recall[name], 4),
                "f1": round(table.f1[name], 4),
                "support": table.support[name],
            }
            for name in table.classes
        },
        "accuracy": round(table.accuracy, 4),
    }


def emit_stage_csv(table: StageReportTable, stream) -> None:
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(("class", "precision", "recall", "f1", "support"))
    for name in table.classes:
        writer.writerow((name, _fmt(table.precision[name]), _fmt(table.recall[name]),
                         _fmt(table.f1[name]), table.support[name]))
    writer.writerow(("accuracy", _fmt(table.accuracy), "", "", int(table.confusion.sum())))
    writer.writerow(())
    writer.writerow(("confusion", *(f"pred_{c}" for c in table.classes)))
    for i, name in enumerate(table.classes):
        writer.writerow((f"gt_{name}", *table.confusion[i].tolist()))


def csv_text(emit, *args) -> str:
    """Render one of the emit_* writers to a string."""
    buf = io.StringIO()
    emit(*args, buf)
    return buf.getvalue()
