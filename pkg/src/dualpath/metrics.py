"""Classification metrics with explicit conventions.

Per-class precision, recall and F1 use the 0/0 -> 0 convention; macro
averages run over all configured classes, present in the data or not;
weighted averages use true-class support. Subset accuracies split the
data by its conflict flag; an empty subset yields None rather than a
made-up number.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from dualpath.fusion import Ablation, Model
from dualpath.synthdata import Dataset


@dataclass(frozen=True)
class Metrics:
    acc: float
    macro_f1: float
    macro_precision: float
    macro_recall: float
    weighted_f1: float
    weighted_precision: float
    per_class_f1: tuple
    conflict_subset_acc: float | None
    consistent_subset_acc: float | None

    def as_dict(self) -> dict:
        d = {
            "acc": self.acc,
            "macro_f1": self.macro_f1,
            "macro_precision": self.macro_precision,
            "macro_recall": self.macro_recall,
            "weighted_f1": self.weighted_f1,
            "weighted_precision": self.weighted_precision,
            "per_class_f1": list(self.per_class_f1),
            "conflict_subset_acc": self.conflict_subset_acc,
            "consistent_subset_acc": self.consistent_subset_acc,
        }
        return d


def _safe_div(num: float, den: float) -> float:
    return num / den if den > 0 else 0.0


def compute_metrics(labels: np.ndarray, preds: np.ndarray, num_classes: int,
                    conflict_mask: np.ndarray | None = None) -> Metrics:
    labels = np.asarray(labels)
    preds = np.asarray(preds)
    if len(labels) == 0:
        raise ValueError("cannot compute metrics on an empty sample list")
    if len(labels) != len(preds):
        raise ValueError("labels and predictions differ in length")
    acc = float((labels == preds).mean())
    precision = np.zeros(num_classes)
    recall = np.zeros(num_classes)
    f1 = np.zeros(num_classes)
    support = np.zeros(num_classes)
    for c in range(num_classes):
        tp = float(np.sum((preds == c) & (labels == c)))
        fp = float(np.sum((preds == c) & (labels != c)))
        fn = float(np.sum((preds != c) & (labels == c)))
        precision[c] = _safe_div(tp, tp + fp)
        recall[c] = _safe_div(tp, tp + fn)
        f1[c] = _safe_div(2 * precision[c] * recall[c], precision[c] + recall[c])
        support[c] = tp + fn
    weights = support / support.sum()
    conflict_acc = consistent_acc = None
    if conflict_mask is not None:
        conflict_mask = np.asarray(conflict_mask, dtype=bool)
        if conflict_mask.any():
            conflict_acc = float((labels[conflict_mask] == preds[conflict_mask]).mean())
        if (~conflict_mask).any():
            consistent_acc = float((labels[~conflict_mask] == preds[~conflict_mask]).mean())
    return Metrics(
        acc=acc,
        macro_f1=float(f1.mean()),
        macro_precision=float(precision.mean()),
        macro_recall=float(recall.mean()),
        weighted_f1=float((weights * f1).sum()),
        weighted_precision=float((weights * precision).sum()),
        per_class_f1=tuple(float(x) for x in f1),
        conflict_subset_acc=conflict_acc,
        consistent_subset_acc=consistent_acc,
    )


def predict(model: Model, data: Dataset, ablation: Ablation | None = None) -> np.ndarray:
    out = model.forward_batch(data.text, data.video, data.audio,
                              train=False, ablation=ablation)
    return out.probs.data.argmax(axis=1)


def evaluate(model: Model, data: Dataset, ablation: Ablation | None = None) -> Metrics:
    """Eval-mode metrics for a split, including conflict-subset accuracies."""
    preds = predict(model, data, ablation)
    return compute_metrics(data.labels, preds, model.config.num_classes,
                           data.conflicted_mask)


def gating_summary(model: Model, data: Dataset,
                   ablation: Ablation | None = None) -> dict:
    """Mean gate value on the conflicted and consistent subsets."""
    out = model.forward_batch(data.text, data.video, data.audio,
                              train=False, ablation=ablation)
    gate = out.report.gate.data.reshape(-1)
    mask = data.conflicted_mask
    return {
        "gate_mean": float(gate.mean()),
        "gate_mean_conflicted": float(gate[mask].mean()) if mask.any() else None,
        "gate_mean_consistent": float(gate[~mask].mean()) if (~mask).any() else None,
        "n_conflicted": int(mask.sum()),
        "n_consistent": int((~mask).sum()),
    }
