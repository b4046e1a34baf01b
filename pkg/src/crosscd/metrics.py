"""Confusion counts and change-class metrics."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn, self.tn + other.tn)

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


@dataclass(frozen=True)
class MetricReport:
    precision: float
    recall: float
    f1: float
    iou: float
    oa: float

    def as_dict(self) -> dict:
        return asdict(self)


def confusion(pred, gt) -> ConfusionCounts:
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"prediction {pred.shape} and ground truth {gt.shape} differ in shape")
    p = pred.astype(bool)
    g = gt.astype(bool)
    tp = int(np.count_nonzero(p & g))
    fp = int(np.count_nonzero(p & ~g))
    fn = int(np.count_nonzero(~p & g))
    return ConfusionCounts(tp, fp, fn, int(p.size) - tp - fp - fn)


def f1_from(precision: float, recall: float) -> float:
    """Harmonic mean; 0 when either term is 0."""
    if precision <= 0 or recall <= 0:
        return 0.0
    return 2.0 / (1.0 / recall + 1.0 / precision)


def report(c: ConfusionCounts) -> MetricReport:
    """Metrics of the change class.

    With no positives in either prediction or truth, precision, recall, F1
    and IoU are all 1. A single empty denominator makes that metric 0 (tp is
    necessarily 0 then).
    """
    if c.total == 0:
        raise ValueError("cannot report metrics on empty counts")
    oa = (c.tp + c.tn) / c.total
    if c.tp + c.fp == 0 and c.tp + c.fn == 0:
        return MetricReport(1.0, 1.0, 1.0, 1.0, oa)
    precision = c.tp / (c.tp + c.fp) if c.tp + c.fp else 0.0
    recall = c.tp / (c.tp + c.fn) if c.tp + c.fn else 0.0
    iou = c.tp / (c.tp + c.fn + c.fp)
    return MetricReport(precision, recall, f1_from(precision, recall), iou, oa)


def iou_from_f1(f1: float) -> float:
    return f1 / (2.0 - f1)
