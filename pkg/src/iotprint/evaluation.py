"""Evaluation: confusion matrices, P/R/F1, and unknown-device thresholding.

Reports follow the published table layout: rows are actual classes, columns
are predicted classes, per-class precision/recall/F1 plus a support-weighted
average row, and overall accuracy.  The open-set path calibrates a posterior
threshold on a validation pool (grid 0.00..1.00 step 0.01, smallest
maximizer on ties) and classifies an instance as a known device only when
its maximum posterior strictly exceeds the threshold.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import EmptyPool, IoFailure, LabelOutOfRange
from .nn import ModelParams, predict_batch, predicted_labels
from .transform import IdxDataset

UNKNOWN_LABEL = -1
UNKNOWN_NAME = "unknown"

THRESHOLD_GRID = np.arange(101) / 100.0  # 0.00, 0.01, ..., 1.00


@dataclass
class ClassMetrics:
    precision: float
    recall: float
    f1: float
    support: int


@dataclass
class EvalReport:
    confusion: np.ndarray               # (C, C) counts, rows = actual
    label_names: list[str]
    per_class: list[ClassMetrics]
    weighted_avg: tuple[float, float, float]
    accuracy: float
    threshold: float | None = None

    @property
    def total(self) -> int:
        return int(self.confusion.sum())


@dataclass
class ThresholdResult:
    threshold: float
    achieved_validation_accuracy: float


def compute_report(y_true, y_pred, label_names: list[str]) -> EvalReport:
    """Build an EvalReport from label arrays (no model involved)."""
    y_true = np.asarray(y_true, dtype=np.intp)
    y_pred = np.asarray(y_pred, dtype=np.intp)
    if len(y_true) != len(y_pred):
        raise LabelOutOfRange(f"{len(y_true)} actuals vs {len(y_pred)} predictions")
    n_classes = len(label_names)
    for kind, arr in (("actual", y_true), ("predicted", y_pred)):
        if len(arr) and (arr.min() < 0 or arr.max() >= n_classes):
            raise LabelOutOfRange(
                f"{kind} label {int(arr.min() if arr.min() < 0 else arr.max())} "
                f"outside 0..{n_classes - 1}")
    confusion = np.bincount(
        y_true * n_classes + y_pred, minlength=n_classes * n_classes
    ).reshape(n_classes, n_classes)

    per_class = []
    row_sums = confusion.sum(axis=1)
    col_sums = confusion.sum(axis=0)
    for c in range(n_classes):
        support = int(row_sums[c])
        diag = int(confusion[c, c])
        if support == 0 or col_sums[c] == 0:
            warnings.warn(f"class {label_names[c]!r} has zero "
                          f"{'support' if support == 0 else 'predictions'}; "
                          "reporting 0 metrics", stacklevel=2)
        precision = diag / col_sums[c] if col_sums[c] else 0.0
        recall = diag / support if support else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        per_class.append(ClassMetrics(precision, recall, f1, support))

    total = int(confusion.sum())
    if total:
        weights = row_sums / total
        weighted = tuple(
            float(sum(w * getattr(m, attr) for w, m in zip(weights, per_class)))
            for attr in ("precision", "recall", "f1"))
        accuracy = float(np.trace(confusion)) / total
    else:
        weighted = (0.0, 0.0, 0.0)
        accuracy = 0.0
    return EvalReport(confusion=confusion, label_names=list(label_names),
                      per_class=per_class, weighted_avg=weighted,
                      accuracy=accuracy)


def evaluate(params: ModelParams, test: IdxDataset) -> EvalReport:
    """Binary: predict 1 iff p >= 0.5.  Multiclass: argmax (lowest index ties)."""
    width = params.output_width
    n_classes = max(width, 2)
    if len(test) and int(test.labels.max()) >= n_classes:
        raise LabelOutOfRange(f"test label {int(test.labels.max())} out of range "
                              f"for a {width}-output model")
    names = list(test.label_names) if len(test.label_names) == n_classes \
        else [f"class-{i}" for i in range(n_classes)]
    if len(test) == 0:
        return compute_report(np.zeros(0, dtype=np.intp),
                              np.zeros(0, dtype=np.intp), names)
    y_pred = predicted_labels(predict_batch(params, test.images))
    return compute_report(test.labels, y_pred, names)


def classify_with_threshold(probs: np.ndarray, threshold: float) -> int:
    """Argmax label if max probability strictly exceeds threshold, else -1."""
    probs = np.asarray(probs)
    if float(probs.max()) > threshold:
        return int(np.argmax(probs))
    return UNKNOWN_LABEL


def classify_batch_with_threshold(probs: np.ndarray, threshold: float) -> np.ndarray:
    """Vectorized classify_with_threshold over (N, X) posteriors."""
    probs = np.atleast_2d(probs)
    labels = np.argmax(probs, axis=1)
    labels[probs.max(axis=1) <= threshold] = UNKNOWN_LABEL
    return labels


def calibrate_from_probs(known_probs: np.ndarray, known_labels: np.ndarray,
                         unknown_probs: np.ndarray) -> ThresholdResult:
    """Grid-sweep the threshold maximizing combined-pool accuracy.

    Correct means: a known-pool instance keeps its true label, an
    unknown-pool instance falls below the threshold.  Ties return the
    smallest maximizing threshold.
    """
    known_probs = np.atleast_2d(known_probs)
    unknown_probs = np.atleast_2d(unknown_probs)
    if len(unknown_probs) == 0 or unknown_probs.shape[1] == 0:
        raise EmptyPool("unknown-device calibration pool is empty")
    if len(known_probs) == 0:
        raise EmptyPool("known-device calibration pool is empty")
    known_max = known_probs.max(axis=1)
    known_hit = np.argmax(known_probs, axis=1) == np.asarray(known_labels)
    unknown_max = unknown_probs.max(axis=1)
    total = len(known_max) + len(unknown_max)
    best_threshold, best_accuracy = 0.0, -1.0
    for threshold in THRESHOLD_GRID:
        correct = int((known_hit & (known_max > threshold)).sum()) \
            + int((unknown_max <= threshold).sum())
        accuracy = correct / total
        if accuracy > best_accuracy:
            best_threshold, best_accuracy = float(threshold), accuracy
    return ThresholdResult(threshold=best_threshold,
                           achieved_validation_accuracy=best_accuracy)


def calibrate_threshold(params: ModelParams, known_validation: IdxDataset,
                        unknown_pool: np.ndarray) -> ThresholdResult:
    """Calibrate on the validation split of knowns + the excluded device."""
    if unknown_pool is None or len(unknown_pool) == 0:
        raise EmptyPool("unknown-device calibration pool is empty")
    if len(known_validation) == 0:
        raise EmptyPool("known-device calibration pool is empty")
    return calibrate_from_probs(predict_batch(params, known_validation.images),
                                known_validation.labels,
                                predict_batch(params, unknown_pool))


def unknown_report_from_probs(known_probs, known_labels, unknown_probs,
                              threshold: float, label_names: list[str]) -> EvalReport:
    """(C+1)-class report where class C is the unknown device."""
    n_known = len(label_names)
    y_true = np.concatenate([np.asarray(known_labels, dtype=np.intp),
                             np.full(len(np.atleast_2d(unknown_probs)), n_known,
                                     dtype=np.intp)])
    y_pred = np.concatenate([classify_batch_with_threshold(known_probs, threshold),
                             classify_batch_with_threshold(unknown_probs, threshold)])
    y_pred[y_pred == UNKNOWN_LABEL] = n_known
    report = compute_report(y_true, y_pred, list(label_names) + [UNKNOWN_NAME])
    report.threshold = threshold
    return report


def unknown_detection_report(params: ModelParams, threshold: float,
                             known_test: IdxDataset,
                             unknown_test: np.ndarray) -> EvalReport:
    """Evaluate the open-set classifier on held-out known + unknown pools."""
    return unknown_report_from_probs(
        predict_batch(params, known_test.images), known_test.labels,
        predict_batch(params, unknown_test), threshold, known_test.label_names)


def unknown_recall(report: EvalReport) -> float:
    """Recall of the unknown class in an unknown_detection_report."""
    if report.label_names[-1] != UNKNOWN_NAME:
        raise ValueError("not an unknown-detection report")
    return report.per_class[-1].recall


def format_report(report: EvalReport) -> str:
    """Aligned plain-text table: confusion, per-class metrics, averages."""
    names = report.label_names
    name_width = max([len(n) for n in names + ["Weighted avg"]])
    cell = max(8, max((len(str(int(v))) for v in report.confusion.ravel()),
                      default=1) + 2)
    lines = ["Confusion matrix (rows = actual, columns = predicted):"]
    header = " " * (name_width + 2) + "".join(f"{n[:cell - 1]:>{cell}}" for n in names)
    lines.append(header)
    for i, name in enumerate(names):
        row = "".join(f"{int(v):>{cell}}" for v in report.confusion[i])
        lines.append(f"{name:<{name_width}}  {row}")
    lines.append("")
    lines.append(f"{'Class':<{name_width}}  {'Precision':>9}  {'Recall':>9}  "
                 f"{'F1':>9}  {'Support':>9}")
    for name, m in zip(names, report.per_class):
        lines.append(f"{name:<{name_width}}  {m.precision:>9.3f}  {m.recall:>9.3f}  "
                     f"{m.f1:>9.3f}  {m.support:>9d}")
    wp, wr, wf = report.weighted_avg
    lines.append(f"{'Weighted avg':<{name_width}}  {wp:>9.3f}  {wr:>9.3f}  "
                 f"{wf:>9.3f}  {report.total:>9d}")
    lines.append("")
    lines.append(f"Accuracy: {report.accuracy:.4f} "
                 f"({int(np.trace(report.confusion))}/{report.total})")
    if report.threshold is not None:
        lines.append(f"Threshold: {report.threshold:.2f}")
    return "\n".join(lines) + "\n"


def write_confusion_csv(report: EvalReport, path) -> None:
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["actual\\predicted"] + report.label_names)
            for name, row in zip(report.label_names, report.confusion):
                writer.writerow([name] + [int(v) for v in row])
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def write_metrics_csv(report: EvalReport, path) -> None:
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["class", "precision", "recall", "f1", "support"])
            for name, m in zip(report.label_names, report.per_class):
                writer.writerow([name, f"{m.precision:.6f}", f"{m.recall:.6f}",
                                 f"{m.f1:.6f}", m.support])
            wp, wr, wf = report.weighted_avg
            writer.writerow(["weighted_avg", f"{wp:.6f}", f"{wr:.6f}",
                             f"{wf:.6f}", report.total])
            writer.writerow(["accuracy", f"{report.accuracy:.6f}", "", "", ""])
            if report.threshold is not None:
                writer.writerow(["threshold", f"{report.threshold:.2f}", "", "", ""])
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc
