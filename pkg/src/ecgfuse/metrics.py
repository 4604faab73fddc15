"""Accuracy, binary F1 and rank-based ROC AUC, pooled or averaged per subject."""
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

DIMENSIONS = ("valence", "arousal", "dominance")
THRESHOLD = 0.5


def accuracy(prob, y):
    pred = np.asarray(prob) >= THRESHOLD
    return float(np.mean(pred == np.asarray(y, dtype=bool)))


def f1_score(prob, y):
    """F1 with High (1) as the positive class; None when tp + fp + fn == 0."""
    pred = np.asarray(prob) >= THRESHOLD
    y = np.asarray(y, dtype=bool)
    tp = int(np.sum(pred & y))
    fp = int(np.sum(pred & ~y))
    fn = int(np.sum(~pred & y))
    if tp + fp + fn == 0:
        return None
    return 2.0 * tp / (2.0 * tp + fp + fn)


def roc_auc(prob, y):
    """Mann-Whitney AUC with ties counted as one half; None for a single class."""
    prob = np.asarray(prob, dtype=np.float64)
    y = np.asarray(y, dtype=bool)
    n_pos, n_neg = int(y.sum()), int((~y).sum())
    if n_pos == 0 or n_neg == 0:
        return None
    ranks = rankdata(prob)
    return float((ranks[y].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


@dataclass
class DimensionMetrics:
    acc: float
    f1: object
    auc: object
    n_trials: int
    n_subjects: int
    n_skipped_auc: int = 0
    n_skipped_f1: int = 0

    def to_dict(self):
        return dict(self.__dict__)


@dataclass
class MetricsReport:
    grouping: str
    dimensions: dict = field(default_factory=dict)

    def __getitem__(self, dim):
        return self.dimensions[dim]

    def to_dict(self):
        return {dim: m.to_dict() for dim, m in self.dimensions.items()}


def _mean_defined(values):
    kept = [v for v in values if v is not None]
    return (float(np.mean(kept)) if kept else None), len(values) - len(kept)


def evaluate(probabilities, targets, subject_ids=None, grouping="pooled"):
    """Score ``(N, 3)`` probabilities against ``(N, 3)`` binary targets.

    ``grouping="per-subject-mean"`` computes each metric per subject and
    averages over subjects where it is defined, counting skipped subjects.
    """
    probs = np.atleast_2d(np.asarray(probabilities, dtype=np.float64))
    ys = np.atleast_2d(np.asarray(targets)).astype(bool)
    if probs.shape != ys.shape or probs.shape[0] == 0:
        raise ValueError(f"probabilities {probs.shape} and targets {ys.shape} must match and be non-empty")
    if np.any((probs < 0) | (probs > 1)) or not np.all(np.isfinite(probs)):
        raise ValueError("probabilities must lie in [0, 1]")
    if subject_ids is None:
        subject_ids = ["all"] * probs.shape[0]
    subject_ids = np.asarray([str(s) for s in subject_ids])
    subjects = sorted(set(subject_ids.tolist()))
    if grouping not in ("pooled", "per-subject-mean"):
        raise ValueError(f"unknown grouping {grouping!r}")

    report = MetricsReport(grouping)
    for k, dim in enumerate(DIMENSIONS[: probs.shape[1]]):
        p, y = probs[:, k], ys[:, k]
        if grouping == "pooled":
            auc = roc_auc(p, y)
            f1 = f1_score(p, y)
            report.dimensions[dim] = DimensionMetrics(
                accuracy(p, y), f1, auc, len(p), len(subjects),
                int(auc is None), int(f1 is None))
            continue
        accs, f1s, aucs = [], [], []
        for s in subjects:
            sel = subject_ids == s
            accs.append(accuracy(p[sel], y[sel]))
            f1s.append(f1_score(p[sel], y[sel]))
            aucs.append(roc_auc(p[sel], y[sel]))
        f1, skip_f1 = _mean_defined(f1s)
        auc, skip_auc = _mean_defined(aucs)
        report.dimensions[dim] = DimensionMetrics(
            float(np.mean(accs)), f1, auc, len(p), len(subjects), skip_auc, skip_f1)
    return report
