"""Binary classification metrics and the two-category label condensation.

The skin-lesion label map collapses fourteen source classes into
SkinCancer (the three carcinoma/melanoma classes) and Other. Metrics
follow the usual confusion-matrix definitions; undefined fractions
(zero denominators) are reported as absent rather than coerced to 0,
and ROC AUC is computed as an exact trapezoidal sweep in integer
arithmetic, which makes it identical to the pairwise rank statistic.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

SKIN_CANCER = "SkinCancer"
OTHER = "Other"

SKIN_CANCER_CLASSES = frozenset({
    "Basal cell carcinoma",
    "Melanoma",
    "Squamous cell carcinoma",
})

OTHER_CLASSES = frozenset({
    "Actinic keratoses",
    "Benign keratosis-like lesions",
    "Chickenpox",
    "Cowpox",
    "Dermatofibroma",
    "Healthy",
    "HFMD",
    "Measles",
    "Melanocytic nevi",
    "Monkeypox",
    "Vascular lesions",
})

ALL_CLASSES = SKIN_CANCER_CLASSES | OTHER_CLASSES


class MetricsError(Exception):
    pass


def sigmoid(logits) -> np.ndarray:
    """Map raw classifier logits to scores in (0, 1). The graph emits
    logits; the 0.5 decision threshold applies to these scores."""
    x = np.asarray(logits, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def map_label(name: str) -> str:
    """Condense one of the fourteen source class names to a category."""
    if name in SKIN_CANCER_CLASSES:
        return SKIN_CANCER
    if name in OTHER_CLASSES:
        return OTHER
    raise MetricsError(f"unknown class name {name!r}")


def label_to_binary(name: str) -> int:
    """1 for the positive (SkinCancer) category, 0 otherwise. Accepts a
    source class name, a category name, or a 0/1 string."""
    if name in ("0", "1"):
        return int(name)
    if name == SKIN_CANCER:
        return 1
    if name == OTHER:
        return 0
    return 1 if map_label(name) == SKIN_CANCER else 0


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    tn: int
    fp: int
    fn: int

    def __post_init__(self) -> None:
        if min(self.tp, self.tn, self.fp, self.fn) < 0:
            raise MetricsError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn


def confusion(scores, labels, threshold: float = 0.5) -> ConfusionMatrix:
    """Count outcomes with ``score >= threshold`` predicting positive."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    if s.shape != y.shape or s.ndim != 1:
        raise MetricsError(f"scores and labels must be equal-length vectors, "
                           f"got {s.shape} and {y.shape}")
    if s.size == 0:
        raise MetricsError("empty input")
    if not np.all(np.isfinite(s)):
        raise MetricsError("scores must be finite")
    pred = s >= threshold
    pos = y.astype(np.int64) == 1
    return ConfusionMatrix(
        tp=int(np.sum(pred & pos)),
        tn=int(np.sum(~pred & ~pos)),
        fp=int(np.sum(pred & ~pos)),
        fn=int(np.sum(~pred & pos)),
    )


@dataclass(frozen=True)
class MetricsReport:
    accuracy: float
    precision: float | None
    recall: float | None
    f1: float | None
    roc_auc: float | None = None

    def as_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "roc_auc": self.roc_auc,
        }

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), indent=2) + "\n"


METRICS_CSV_HEADER = "accuracy,precision,recall,f1,roc_auc"


def metrics_csv_row(report: MetricsReport) -> str:
    cells = [report.accuracy, report.precision, report.recall, report.f1, report.roc_auc]
    return ",".join("" if v is None else repr(float(v)) for v in cells)


def f1_from_precision_recall(precision: float | None,
                             recall: float | None) -> float | None:
    """Harmonic mean; absent when either input is absent or both are 0."""
    if precision is None or recall is None or precision + recall == 0:
        return None
    return 2.0 * precision * recall / (precision + recall)


def metrics(cm: ConfusionMatrix, auc: float | None = None) -> MetricsReport:
    if cm.total == 0:
        raise MetricsError("cannot compute metrics over zero samples")
    precision = cm.tp / (cm.tp + cm.fp) if cm.tp + cm.fp > 0 else None
    recall = cm.tp / (cm.tp + cm.fn) if cm.tp + cm.fn > 0 else None
    return MetricsReport(
        accuracy=(cm.tp + cm.tn) / cm.total,
        precision=precision,
        recall=recall,
        f1=f1_from_precision_recall(precision, recall),
        roc_auc=auc,
    )


def roc_auc(scores, labels) -> float:
    """Area under the ROC curve, sweeping thresholds at every unique
    score with trapezoidal integration (ties contribute half).

    The area numerator is accumulated in exact integer arithmetic before
    the single division by positives*negatives, so the result matches
    the pairwise Mann-Whitney statistic bit for bit.
    """
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if s.shape != y.shape or s.ndim != 1 or s.size == 0:
        raise MetricsError("scores and labels must be equal-length non-empty vectors")
    if not np.all(np.isfinite(s)):
        raise MetricsError("scores must be finite")
    pos_total = int(np.sum(y == 1))
    neg_total = int(s.size - pos_total)
    if pos_total == 0 or neg_total == 0:
        raise MetricsError("ROC AUC needs at least one positive and one negative label")

    order = np.argsort(-s, kind="stable")
    sorted_scores = s[order]
    sorted_pos = (y[order] == 1).astype(np.int64)

    # Group ends: last index of every run of equal scores.
    change = np.nonzero(np.diff(sorted_scores))[0]
    ends = np.concatenate([change, [s.size - 1]])
    tp_at = np.cumsum(sorted_pos)[ends].tolist()
    n_at = (ends + 1).tolist()

    area2 = 0  # 2 * area in units of (TP steps) x (FP steps)
    prev_tp = 0
    prev_fp = 0
    for total_seen, tp in zip(n_at, tp_at):
        fp = total_seen - tp
        area2 += (fp - prev_fp) * (tp + prev_tp)
        prev_tp, prev_fp = tp, fp
    return area2 / (2 * pos_total * neg_total)
