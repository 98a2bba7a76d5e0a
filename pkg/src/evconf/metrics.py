"""Classification and confidence-quality metrics.

Accuracy/F1 grade the classifier; ECE, NCE, AUROC, and AUPRC grade the
confidence scores against per-example correctness.  Every metric here is
checked against an independent brute-force oracle in the tests.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, UndefinedMetricError

__all__ = [
    "EceConfig",
    "MetricsReport",
    "RejectPoint",
    "accuracy_f1",
    "ece",
    "reliability_bins",
    "nce",
    "auroc",
    "auprc",
    "reject_sweep",
]

# Floor for the probability assigned to the realized outcome inside the NCE
# cross-entropy; prevents log(0) while leaving exact scores exact.
NCE_PROB_FLOOR = 1e-7


@dataclass(frozen=True)
class EceConfig:
    """Equal-width binning of [0, 1]; the first bin is closed, the rest are
    left-open right-closed so confidence 1.0 lands in the top bin."""

    num_bins: int = 10

    def __post_init__(self):
        if self.num_bins < 1:
            raise ContractError("num_bins must be >= 1")

    def edges(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.num_bins + 1)

    def assign(self, confidences: np.ndarray) -> np.ndarray:
        idx = np.searchsorted(self.edges(), confidences, side="left") - 1
        return np.clip(idx, 0, self.num_bins - 1)


@dataclass(frozen=True)
class RejectPoint:
    threshold: float
    coverage: float
    accuracy: float
    f1: float
    n_retained: int


@dataclass(frozen=True)
class MetricsReport:
    method: str
    seed: int
    n: int
    accuracy: float
    f1: float
    ece: float
    nce: float
    auroc: float
    auprc: float

    @classmethod
    def from_records(cls, records, method: str, seed: int,
                     ece_cfg: EceConfig | None = None) -> "MetricsReport":
        """Compute every metric; degenerate inputs (all correct, single
        class) yield NaN for the affected score instead of raising."""
        cfg = ece_cfg or EceConfig()
        acc, f1 = accuracy_f1(records)
        confidences = [r.confidence for r in records]
        correct = [r.correct for r in records]
        try:
            nce_val = nce(confidences, correct)
        except UndefinedMetricError:
            nce_val = math.nan
        try:
            auroc_val = auroc(confidences, correct)
        except ContractError:
            auroc_val = math.nan
        try:
            auprc_val = auprc(confidences, correct)
        except ContractError:
            auprc_val = math.nan
        return cls(
            method=method,
            seed=seed,
            n=len(records),
            accuracy=acc,
            f1=f1,
            ece=ece(records, cfg),
            nce=nce_val,
            auroc=auroc_val,
            auprc=auprc_val,
        )


def _require_records(records):
    if not records:
        raise ContractError("metric requires at least one record")


def accuracy_f1(records, positive_class: int = 1) -> tuple[float, float]:
    """Fraction correct plus binary F1 for the positive class; empty
    precision or recall denominators yield F1 = 0."""
    _require_records(records)
    n = len(records)
    acc = sum(1 for r in records if r.correct) / n
    tp = sum(1 for r in records if r.predicted_class == positive_class and r.true_class == positive_class)
    fp = sum(1 for r in records if r.predicted_class == positive_class and r.true_class != positive_class)
    fn = sum(1 for r in records if r.predicted_class != positive_class and r.true_class == positive_class)
    if tp == 0:
        return acc, 0.0
    precision = tp / (tp + fp)
    recall = tp / (tp + fn)
    return acc, 2.0 * precision * recall / (precision + recall)


def ece(records, cfg: EceConfig | None = None) -> float:
    """Bin-weighted mean absolute gap between per-bin accuracy and per-bin
    mean confidence; empty bins contribute nothing."""
    _require_records(records)
    cfg = cfg or EceConfig()
    conf = np.array([r.confidence for r in records], dtype=float)
    if np.any(conf < 0.0) or np.any(conf > 1.0):
        raise ContractError("confidences must lie in [0, 1]")
    correct = np.array([r.correct for r in records], dtype=float)
    bins = cfg.assign(conf)
    total = 0.0
    n = len(records)
    for b in range(cfg.num_bins):
        members = bins == b
        count = int(members.sum())
        if count == 0:
            continue
        gap = float(abs(correct[members].mean() - conf[members].mean()))
        total += (count / n) * gap
    return total


def reliability_bins(records, cfg: EceConfig | None = None):
    """Per-bin (mean confidence, accuracy, count) triples for reliability
    diagrams; empty bins carry NaN statistics."""
    _require_records(records)
    cfg = cfg or EceConfig()
    conf = np.array([r.confidence for r in records], dtype=float)
    correct = np.array([r.correct for r in records], dtype=float)
    bins = cfg.assign(conf)
    out = []
    for b in range(cfg.num_bins):
        members = bins == b
        count = int(members.sum())
        if count:
            out.append((float(conf[members].mean()), float(correct[members].mean()), count))
        else:
            out.append((math.nan, math.nan, 0))
    return out


def nce(confidences, correctness) -> float:
    """Normalized cross entropy of confidence scores against correctness.

    1 for perfect scores, 0 for the constant correct-ratio predictor,
    negative when the scores are worse than that baseline.  Natural logs
    throughout; the probability of the realized outcome is floored at
    1e-7 so impossible events stay finite.
    """
    p = np.asarray(confidences, dtype=float)
    c = np.asarray(correctness, dtype=float)
    if p.shape != c.shape or p.ndim != 1 or p.size < 1:
        raise ContractError("confidences and correctness must be equal-length 1-D lists")
    if np.any(p < 0.0) or np.any(p > 1.0):
        raise ContractError("confidences must lie in [0, 1]")
    if not np.all((c == 0.0) | (c == 1.0)):
        raise ContractError("correctness must be binary")
    ratio = float(c.mean())
    if ratio == 0.0 or ratio == 1.0:
        raise UndefinedMetricError(
            "NCE is undefined when correctness is constant (zero entropy)"
        )
    n = p.size
    h_c = -float(c.sum() * math.log(ratio) + (n - c.sum()) * math.log(1.0 - ratio))
    realized = np.where(c == 1.0, p, 1.0 - p)
    h_cp = float(-np.sum(np.log(np.maximum(realized, NCE_PROB_FLOOR))))
    return (h_c - h_cp) / h_c


def auroc(scores, positives) -> float:
    """Mann-Whitney statistic: fraction of (positive, negative) pairs where
    the positive scores higher, ties counted half."""
    s = np.asarray(scores, dtype=float)
    y = np.asarray(positives, dtype=float)
    if s.shape != y.shape or s.ndim != 1 or s.size < 1:
        raise ContractError("scores and positives must be equal-length 1-D lists")
    n_pos = int(y.sum())
    n_neg = s.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ContractError("AUROC needs at least one positive and one negative")
    order = np.argsort(s, kind="stable")
    sorted_s = s[order]
    # midranks: equal scores share the average of their rank range
    ranks = np.empty(s.size)
    i = 0
    while i < s.size:
        j = i
        while j + 1 < s.size and sorted_s[j + 1] == sorted_s[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    rank_sum = float(ranks[y == 1.0].sum())
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def auprc(scores, positives) -> float:
    """Average precision over descending-score prefixes; equal scores are
    grouped so ties cannot order arbitrarily."""
    s = np.asarray(scores, dtype=float)
    y = np.asarray(positives, dtype=float)
    if s.shape != y.shape or s.ndim != 1 or s.size < 1:
        raise ContractError("scores and positives must be equal-length 1-D lists")
    n_pos = int(y.sum())
    if n_pos == 0:
        raise ContractError("AUPRC needs at least one positive")
    order = np.argsort(-s, kind="stable")
    s_desc, y_desc = s[order], y[order]
    ap = 0.0
    tp = fp = 0
    i = 0
    while i < s.size:
        j = i
        while j + 1 < s.size and s_desc[j + 1] == s_desc[i]:
            j += 1
        group_tp = float(y_desc[i : j + 1].sum())
        group_fp = (j - i + 1) - group_tp
        tp += group_tp
        fp += group_fp
        if group_tp > 0:
            precision = tp / (tp + fp)
            ap += precision * (group_tp / n_pos)
        i = j + 1
    return ap


def reject_sweep(records, thresholds):
    """Metrics over the subset with confidence >= tau for each threshold;
    an emptied subset reports coverage 0 with NaN metrics."""
    _require_records(records)
    points = []
    for tau in thresholds:
        if not 0.0 <= tau <= 1.0:
            raise ContractError("reject thresholds must lie in [0, 1]")
        kept = [r for r in records if r.confidence >= tau]
        if kept:
            acc, f1 = accuracy_f1(kept)
        else:
            acc, f1 = math.nan, math.nan
        points.append(
            RejectPoint(
                threshold=float(tau),
                coverage=len(kept) / len(records),
                accuracy=acc,
                f1=f1,
                n_retained=len(kept),
            )
        )
    return points
