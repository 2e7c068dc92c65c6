"""Binary classification metrics for imbalanced mortality prediction.

AUROC is the rank statistic (average ranks for ties), AUPRC is average
precision with ties grouped, and the confusion-matrix rates use the
predict-positive-at-or-above-threshold rule.  All functions take a sequence
of (probability, label) pairs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "EvalReport",
    "confusion_at",
    "brier",
    "auroc",
    "auprc",
    "youden_threshold",
    "report",
    "render_table",
]

TABLE_COLUMNS = ("Specificity", "Sensitivity", "AUC", "Brier Score", "AUPRC")


def _split(predictions):
    pairs = list(predictions)
    if not pairs:
        raise ValueError("no predictions given")
    p = np.array([float(x[0]) for x in pairs])
    y = np.array([int(x[1]) for x in pairs])
    if np.any((p < 0) | (p > 1)):
        raise ValueError("probabilities must lie in [0, 1]")
    if np.any((y != 0) & (y != 1)):
        raise ValueError("labels must be 0 or 1")
    return p, y


def confusion_at(predictions, threshold: float):
    """(TP, FP, TN, FN) counts; a probability >= threshold predicts positive."""
    p, y = _split(predictions)
    pred = p >= threshold
    tp = int(np.sum(pred & (y == 1)))
    fp = int(np.sum(pred & (y == 0)))
    tn = int(np.sum(~pred & (y == 0)))
    fn = int(np.sum(~pred & (y == 1)))
    return tp, fp, tn, fn


def _rate(num: int, den: int) -> float:
    return num / den if den else 0.0


def brier(predictions) -> float:
    """Mean squared difference between predicted probability and outcome."""
    p, y = _split(predictions)
    return float(np.mean((p - y) ** 2))


def _average_ranks(x: np.ndarray) -> np.ndarray:
    order = np.argsort(x, kind="mergesort")
    ranks = np.empty(len(x))
    sx = x[order]
    i = 0
    while i < len(x):
        j = i
        while j + 1 < len(x) and sx[j + 1] == sx[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def auroc(predictions) -> float:
    """P(score_pos > score_neg) + 0.5 P(tie), via rank summation."""
    p, y = _split(predictions)
    n_pos, n_neg = int(y.sum()), int((1 - y).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUROC needs both classes present")
    ranks = _average_ranks(p)
    return float((ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def auprc(predictions) -> float:
    """Average precision over a descending-score sweep with ties grouped."""
    p, y = _split(predictions)
    n_pos = int(y.sum())
    if n_pos == 0:
        raise ValueError("AUPRC needs at least one positive")
    order = np.argsort(-p, kind="mergesort")
    ps, ys = p[order], y[order]

    ap = 0.0
    tp = fp = 0
    prev_recall = 0.0
    i = 0
    while i < len(ps):
        j = i
        while j + 1 < len(ps) and ps[j + 1] == ps[i]:
            j += 1
        tp += int(ys[i : j + 1].sum())
        fp += int((1 - ys[i : j + 1]).sum())
        recall = tp / n_pos
        precision = tp / (tp + fp)
        ap += (recall - prev_recall) * precision
        prev_recall = recall
        i = j + 1
    return float(ap)


def youden_threshold(predictions) -> float:
    """Distinct score maximizing sensitivity + specificity - 1 (lowest wins ties)."""
    p, y = _split(predictions)
    best_t, best_j = 1.0, -np.inf
    for t in np.unique(p):
        tp, fp, tn, fn = confusion_at(zip(p, y), t)
        j = _rate(tp, tp + fn) + _rate(tn, tn + fp) - 1.0
        if j > best_j:
            best_t, best_j = float(t), j
    return best_t


@dataclass
class EvalReport:
    sensitivity: float
    specificity: float
    precision: float
    brier: float
    auroc: float
    auprc: float
    threshold: float
    confusion: tuple  # (TP, FP, TN, FN)

    def as_dict(self) -> dict:
        return {
            "sensitivity": self.sensitivity,
            "specificity": self.specificity,
            "precision": self.precision,
            "brier": self.brier,
            "auroc": self.auroc,
            "auprc": self.auprc,
            "threshold": self.threshold,
            "confusion": list(self.confusion),
        }


def report(predictions, threshold_policy: str = "fixed", threshold: float = 0.5) -> EvalReport:
    """Full metric suite at one operating point.

    threshold_policy "fixed" uses `threshold` as given; "youden" picks the
    threshold maximizing sensitivity + specificity - 1 on these predictions.
    """
    pairs = [(float(p), int(y)) for p, y in predictions]
    if threshold_policy == "youden":
        threshold = youden_threshold(pairs)
    elif threshold_policy != "fixed":
        raise ValueError(f"unknown threshold policy {threshold_policy!r}")
    tp, fp, tn, fn = confusion_at(pairs, threshold)
    return EvalReport(
        sensitivity=_rate(tp, tp + fn),
        specificity=_rate(tn, tn + fp),
        precision=_rate(tp, tp + fp),
        brier=brier(pairs),
        auroc=auroc(pairs),
        auprc=auprc(pairs),
        threshold=threshold,
        confusion=(tp, fp, tn, fn),
    )


def render_table(rows) -> str:
    """Text table of (label, EvalReport) rows in the standard column order."""
    header = ["Model"] + list(TABLE_COLUMNS)
    lines = [
        "  ".join(f"{h:>12}" for h in header),
        "  ".join("-" * 12 for _ in header),
    ]
    for label, rep in rows:
        cells = [
            f"{label:>12}",
            f"{rep.specificity:>12.4f}",
            f"{rep.sensitivity:>12.4f}",
            f"{rep.auroc:>12.4f}",
            f"{rep.brier:>12.4f}",
            f"{rep.auprc:>12.4f}",
        ]
        lines.append("  ".join(cells))
    return "\n".join(lines)
