"""Confusion counts and the symmetric P4 score."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .losses import sigmoid
from .model import Dataset

THRESHOLD = 0.5


class UndefinedMetricWarning(UserWarning):
    pass


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    tn: int
    fp: int
    fn: int

    def __post_init__(self):
        if min(self.tp, self.tn, self.fp, self.fn) < 0:
            raise ValueError("confusion counts must be nonnegative")

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn


def predict(weights, features, threshold=THRESHOLD):
    """Class 1 iff sigma(w, x) >= threshold."""
    return (sigmoid(weights, np.atleast_2d(features)) >= threshold).astype(np.int64)


def confusion(weights, data: Dataset, threshold=THRESHOLD) -> ConfusionCounts:
    if not 0.0 < threshold < 1.0:
        raise ValueError("threshold must lie in (0, 1)")
    pred = predict(weights, data.features, threshold)
    y = data.labels
    return ConfusionCounts(
        tp=int(np.sum((pred == 1) & (y == 1))),
        tn=int(np.sum((pred == 0) & (y == 0))),
        fp=int(np.sum((pred == 1) & (y == 0))),
        fn=int(np.sum((pred == 0) & (y == 1))),
    )


def p4(c: ConfusionCounts) -> Optional[float]:
    """4 TP TN / (4 TP TN + (TP + TN)(FP + FN)); None when the denominator is 0."""
    num = 4 * c.tp * c.tn
    den = num + (c.tp + c.tn) * (c.fp + c.fn)
    if den == 0:
        return None
    return num / den


def mean_defined(values) -> Optional[float]:
    """Mean over the defined entries, warning about any that are undefined."""
    values = list(values)
    vals = [v for v in values if v is not None and not np.isnan(v)]
    skipped = len(values) - len(vals)
    if skipped:
        warnings.warn(f"{skipped} undefined P4 value(s) excluded from the mean", UndefinedMetricWarning)
    return float(np.mean(vals)) if vals else None
