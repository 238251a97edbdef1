"""Thresholding and multi-label F1.

F1 for a label is ``2 tp / (2 tp + fp + fn)``. When a label has no positives
in either the prediction or the truth the denominator is zero and the score is
defined as **0**, not 1, so an all-negative predictor is never rewarded.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from octens.data import DataFormatError, LabelMatrix, ScoreMatrix

DEFAULT_THRESHOLD = 0.5


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def f1(self) -> float:
        denom = 2 * self.tp + self.fp + self.fn
        return 2 * self.tp / denom if denom else 0.0


@dataclass(frozen=True)
class MetricReport:
    labels: tuple[str, ...]
    per_label_f1: tuple[float, ...]
    macro_f1: float
    counts: tuple[ConfusionCounts, ...]

    def lines(self) -> list[str]:
        """``label,f1`` rows followed by ``macro,f1``, six decimals."""
        out = [f"{name},{f1:.6f}" for name, f1 in zip(self.labels, self.per_label_f1)]
        out.append(f"macro,{self.macro_f1:.6f}")
        return out


def _check_threshold(threshold: float):
    if not 0 < threshold < 1:
        raise ValueError(f"threshold must lie in (0, 1), got {threshold}")


def binarize_array(values: np.ndarray, threshold: float = DEFAULT_THRESHOLD) -> np.ndarray:
    _check_threshold(threshold)
    return (np.asarray(values) >= threshold).astype(np.int8)


def binarize(scores: ScoreMatrix, threshold: float = DEFAULT_THRESHOLD) -> LabelMatrix:
    """Scores at or above ``threshold`` become 1 (so 0.5 rounds up)."""
    return LabelMatrix(scores.sample_ids, binarize_array(scores.values, threshold), scores.labels)


def confusion_arrays(pred: np.ndarray, truth: np.ndarray):
    """Per-column ``(tp, fp, fn, tn)`` integer arrays.

    Leading batch axes are allowed on ``pred``: shape ``(..., n, L)`` against
    a truth of shape ``(n, L)``.
    """
    pred = np.asarray(pred, dtype=bool)
    truth = np.asarray(truth, dtype=bool)
    tp = np.count_nonzero(pred & truth, axis=-2)
    fp = np.count_nonzero(pred & ~truth, axis=-2)
    fn = np.count_nonzero(~pred & truth, axis=-2)
    tn = truth.shape[-2] - tp - fp - fn
    return tp, fp, fn, tn


def f1_from_counts(tp, fp, fn) -> np.ndarray:
    tp, fp, fn = (np.asarray(a, dtype=np.float64) for a in (tp, fp, fn))
    denom = 2 * tp + fp + fn
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(denom > 0, 2 * tp / np.where(denom > 0, denom, 1), 0.0)


def macro_f1_array(pred: np.ndarray, truth: np.ndarray) -> np.ndarray:
    """Macro F1 of ``pred`` (optionally batched) against ``truth``."""
    tp, fp, fn, _ = confusion_arrays(pred, truth)
    f1 = f1_from_counts(tp, fp, fn)
    # left-to-right sum, bit-identical to evaluate()
    total = f1[..., 0].copy()
    for k in range(1, f1.shape[-1]):
        total += f1[..., k]
    return total / f1.shape[-1]


def evaluate(pred: LabelMatrix, truth: LabelMatrix) -> MetricReport:
    """Per-label and macro F1 of aligned predictions against ground truth."""
    if tuple(pred.sample_ids) != tuple(truth.sample_ids):
        raise DataFormatError("prediction and truth rows are not aligned (sample_id mismatch)")
    if tuple(pred.labels) != tuple(truth.labels) or pred.values.shape != truth.values.shape:
        raise DataFormatError("prediction and truth have different label columns")
    tp, fp, fn, tn = confusion_arrays(pred.values, truth.values)
    counts = tuple(
        ConfusionCounts(int(a), int(b), int(c), int(d)) for a, b, c, d in zip(tp, fp, fn, tn)
    )
    per_label = tuple(c.f1 for c in counts)
    return MetricReport(tuple(truth.labels), per_label, sum(per_label) / len(per_label), counts)
