"""Ranking metrics for imbalanced binary classification and time splits."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class MetricError(ValueError):
    pass


def roc_auc(scores, labels) -> float:
    """Probability a random positive outranks a random negative; ties count 1/2.

    Computed from average ranks, which is exactly the pairwise statistic.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise MetricError("roc_auc needs at least one positive and one negative")
    order = np.argsort(scores, kind="stable")
    ranks = np.empty(len(scores))
    # average ranks over tied score groups
    sorted_scores = scores[order]
    i = 0
    while i < len(scores):
        j = i
        while j < len(scores) and sorted_scores[j] == sorted_scores[i]:
            j += 1
        ranks[order[i:j]] = (i + j + 1) / 2.0   # 1-based average rank
        i = j
    rank_sum_pos = ranks[labels == 1].sum()
    return float((rank_sum_pos - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def average_precision(scores, labels) -> float:
    """Sum of (recall step) * precision over descending score thresholds.

    Tied scores are grouped at one threshold, so the result is
    deterministic regardless of input order.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    n_pos = int((labels == 1).sum())
    if n_pos == 0:
        raise MetricError("average_precision needs at least one positive")
    order = np.argsort(-scores, kind="stable")
    s, y = scores[order], labels[order]
    ap = 0.0
    tp = 0
    n_seen = 0
    i = 0
    while i < len(s):
        j = i
        while j < len(s) and s[j] == s[i]:
            j += 1
        group_pos = int((y[i:j] == 1).sum())
        tp += group_pos
        n_seen += j - i
        if group_pos:
            precision = tp / n_seen
            ap += (group_pos / n_pos) * precision
        i = j
    return float(ap)


@dataclass(frozen=True)
class Split:
    """Disjoint snapshot-id sets in time order: train < val < test."""

    train_snapshots: frozenset[int]
    val_snapshots: frozenset[int]
    test_snapshots: frozenset[int]

    def part_of(self, snapshot: int) -> str:
        if snapshot in self.train_snapshots:
            return "train"
        if snapshot in self.val_snapshots:
            return "val"
        if snapshot in self.test_snapshots:
            return "test"
        raise MetricError(f"snapshot {snapshot} outside split")


def time_split(n_snapshots: int, fractions=(0.8, 0.1, 0.1)) -> Split:
    """Snapshots 0..N-1 into train/val/test blocks; val and test get at
    least one snapshot each, the remainder goes to train."""
    n = n_snapshots
    if n < 3:
        raise MetricError(f"need at least 3 snapshots, got {n}")
    _, f_val, f_test = fractions
    n_val = max(1, int(n * f_val))
    n_test = max(1, int(n * f_test))
    n_train = n - n_val - n_test
    if n_train < 1:
        raise MetricError("split fractions leave no training snapshots")
    return Split(
        train_snapshots=frozenset(range(n_train)),
        val_snapshots=frozenset(range(n_train, n_train + n_val)),
        test_snapshots=frozenset(range(n_train + n_val, n)),
    )
