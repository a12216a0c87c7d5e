"""Confusion matrices and the five reported classification metrics."""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

METRIC_COLUMNS = ("Precision", "Sensitivity", "Specificity", "Accuracy", "F1")
METHOD_LABELS = {"original": "Original", "transform": "Transformations", "cut": "CUT", "cyclegan": "CycleGAN"}
BACKBONE_LABELS = {"inception_cnn": "GoogLeNet-class CNN", "vit": "Vision Transformer (ViT)"}


class MetricsError(ValueError):
    pass


@dataclass(frozen=True)
class ConfusionMatrix:
    """``counts[t, p]``: samples of true class t+1 predicted as p+1."""

    counts: np.ndarray

    def __post_init__(self) -> None:
        c = np.asarray(self.counts)
        if c.ndim != 2 or c.shape[0] != c.shape[1]:
            raise MetricsError(f"confusion matrix must be square, got {c.shape}")
        if (c < 0).any() or not np.all(np.equal(np.mod(c, 1), 0)):
            raise MetricsError("confusion matrix entries must be non-negative integers")
        c = c.astype(np.int64)
        c.flags.writeable = False
        object.__setattr__(self, "counts", c)

    @property
    def k(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def confusion_matrix(true_labels: Sequence[int], predicted_labels: Sequence[int], k: int = 6) -> ConfusionMatrix:
    t = np.asarray(true_labels, dtype=np.int64).ravel()
    p = np.asarray(predicted_labels, dtype=np.int64).ravel()
    if t.shape != p.shape:
        raise MetricsError(f"length mismatch: {t.size} true vs {p.size} predicted labels")
    for name, arr in (("true", t), ("predicted", p)):
        if arr.size and (arr.min() < 1 or arr.max() > k):
            raise MetricsError(f"{name} labels must lie in [1, {k}]")
    cm = np.zeros((k, k), dtype=np.int64)
    np.add.at(cm, (t - 1, p - 1), 1)
    return ConfusionMatrix(cm)


@dataclass(frozen=True)
class MetricsReport:
    precision: np.ndarray
    sensitivity: np.ndarray
    specificity: np.ndarray
    f1: np.ndarray
    accuracy: float
    average: str = "macro"
    support: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def _avg(self, values: np.ndarray) -> float:
        if self.average == "weighted":
            w = self.support / self.support.sum()
            return float(np.sum(values * w))
        return float(np.mean(values))

    @property
    def macro(self) -> dict[str, float]:
        return {
            "Precision": self._avg(self.precision),
            "Sensitivity": self._avg(self.sensitivity),
            "Specificity": self._avg(self.specificity),
            "Accuracy": float(self.accuracy),
            "F1": self._avg(self.f1),
        }

    def row(self) -> dict[str, float]:
        return self.macro


def _safe_div(num: np.ndarray, den: np.ndarray, name: str) -> np.ndarray:
    out = np.zeros_like(num, dtype=np.float64)
    nz = den > 0
    out[nz] = num[nz] / den[nz]
    for c in np.flatnonzero(~nz):
        warnings.warn(f"class {c + 1}: {name} has a zero denominator; reported as 0", stacklevel=3)
    return out


def compute_metrics(cm: ConfusionMatrix, average: str = "macro") -> MetricsReport:
    """Per-class precision/sensitivity/specificity/F1 plus accuracy.

    ``average`` picks how the summary scalars combine classes: ``macro``
    (unweighted), ``weighted`` (by true-class support) or ``micro`` (pooled
    TP/FP/FN/TN counts, reported as constant per-class arrays).
    """
    if average not in ("macro", "micro", "weighted"):
        raise MetricsError(f"unknown averaging {average!r}")
    c = cm.counts.astype(np.float64)
    total = c.sum()
    if total == 0:
        raise MetricsError("confusion matrix is empty")
    tp = np.diag(c)
    fp = c.sum(axis=0) - tp
    fn = c.sum(axis=1) - tp
    tn = total - tp - fp - fn
    accuracy = float(tp.sum() / total)
    if average == "micro":
        tp, fp, fn, tn = (np.array([v.sum()]) for v in (tp, fp, fn, tn))
    precision = _safe_div(tp, tp + fp, "precision")
    sensitivity = _safe_div(tp, tp + fn, "sensitivity")
    specificity = _safe_div(tn, tn + fp, "specificity")
    f1 = _safe_div(2 * precision * sensitivity, precision + sensitivity, "F1")
    return MetricsReport(
        precision=precision,
        sensitivity=sensitivity,
        specificity=specificity,
        f1=f1,
        accuracy=accuracy,
        average=average,
        support=c.sum(axis=1),
    )


# -- report emission -----------------------------------------------------------------

def metrics_rows(results: Iterable[tuple[str, str, MetricsReport]]) -> list[dict]:
    """One row per (backbone, method) with the five table columns."""
    rows = []
    for backbone, method, rep in results:
        row = {"backbone": backbone, "method": method}
        row.update({k: round(v, 4) for k, v in rep.macro.items()})
        rows.append(row)
    return rows


def write_metrics_csv(path: Path, rows: Sequence[dict]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with Path(path).open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["backbone", "method", *METRIC_COLUMNS], lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (f"{r[k]:.4f}" if k in METRIC_COLUMNS else r[k]) for k in w.fieldnames})


def read_metrics_csv(path: Path) -> list[dict]:
    with Path(path).open(newline="") as fh:
        return [
            {k: (float(v) if k in METRIC_COLUMNS else v) for k, v in row.items()} for row in csv.DictReader(fh)
        ]


def format_metrics_table(rows: Sequence[dict]) -> str:
    """Plain-text block grouped by backbone, one line per augmentation method."""
    header = f"{'Augmentation method':<22}" + "".join(f"{c:>13}" for c in METRIC_COLUMNS)
    lines = [header, "-" * len(header)]
    for backbone in dict.fromkeys(r["backbone"] for r in rows):
        lines.append(BACKBONE_LABELS.get(backbone, backbone))
        for r in (r for r in rows if r["backbone"] == backbone):
            label = METHOD_LABELS.get(r["method"], r["method"])
            lines.append(f"  {label:<20}" + "".join(f"{r[c]:>13.4f}" for c in METRIC_COLUMNS))
    return "\n".join(lines) + "\n"
