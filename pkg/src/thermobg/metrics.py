"""Confusion counting and the change-detection metric suite.

Foreground is the positive class.  Ground-truth pixels equal to the ignore
label (128 by default) are excluded from every count, which supports
benchmark masks with non-ROI regions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

IGNORE_LABEL = 128

METRIC_KEYS = ("precision", "recall", "f1", "specificity", "fpr", "fnr", "pwc")


@dataclass
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    def __post_init__(self):
        if min(self.tp, self.fp, self.tn, self.fn) < 0:
            raise ValueError("confusion counts must be nonnegative")

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(self.tp + other.tp, self.fp + other.fp,
                               self.tn + other.tn, self.fn + other.fn)

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


def accumulate(pred, gt, ignore_value: int = IGNORE_LABEL) -> ConfusionCounts:
    """Tally a predicted mask against ground truth.

    Accepts {0,1} label arrays or PGM-style {0,255} arrays for either input;
    gt pixels equal to ignore_value contribute to no count.
    """
    pred_fg = _as_foreground(pred)
    gt_arr = np.asarray(gt)
    if pred_fg.shape != gt_arr.shape:
        raise ValueError(
            f"mask shapes differ: {pred_fg.shape} vs {gt_arr.shape}")
    valid = gt_arr != ignore_value
    gt_fg = _as_foreground(gt_arr) & valid
    gt_bg = ~_as_foreground(gt_arr) & valid
    return ConfusionCounts(
        tp=int(np.count_nonzero(pred_fg & gt_fg)),
        fp=int(np.count_nonzero(pred_fg & gt_bg)),
        tn=int(np.count_nonzero(~pred_fg & gt_bg)),
        fn=int(np.count_nonzero(~pred_fg & gt_fg)),
    )


def metrics(c: ConfusionCounts) -> dict:
    """The seven-metric report plus raw counts.

    Zero-denominator ratios come out as 0.0 and are named in the flat
    ``degenerate`` field.
    """
    degenerate: list[str] = []

    def ratio(num, den, name):
        if den == 0:
            degenerate.append(name)
            return 0.0
        return num / den

    precision = ratio(c.tp, c.tp + c.fp, "precision")
    recall = ratio(c.tp, c.tp + c.fn, "recall")
    f1 = ratio(2.0 * precision * recall, precision + recall, "f1")
    specificity = ratio(c.tn, c.tn + c.fp, "specificity")
    fpr = ratio(c.fp, c.fp + c.tn, "fpr")
    fnr = ratio(c.fn, c.tp + c.fn, "fnr")
    pwc = ratio(100.0 * (c.fn + c.fp), c.total, "pwc")
    return {
        "precision": precision, "recall": recall, "f1": f1,
        "specificity": specificity, "fpr": fpr, "fnr": fnr, "pwc": pwc,
        "tp": c.tp, "fp": c.fp, "tn": c.tn, "fn": c.fn,
        "degenerate": ",".join(degenerate),
    }


def _as_foreground(arr) -> np.ndarray:
    a = np.asarray(arr)
    return (a == 1) | (a == 255)
