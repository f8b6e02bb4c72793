"""Class-wise dual thresholds and trichotomous pseudo-label assignment.

Each class gets a positive and a negative threshold set to the mid-range of
the scores its labelled positives/negatives receive; predictions above the
positive threshold become confident positives, below the negative threshold
confident negatives, and everything in between stays uncertain (-1).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Array


@dataclass
class ClassThresholds:
    tau_pos: Array
    tau_neg: Array
    n_pos_support: Array
    n_neg_support: Array

    @property
    def num_classes(self) -> int:
        return self.tau_pos.shape[0]


def derive_thresholds(sup_preds: Array, sup_labels: Array) -> ClassThresholds:
    """Mid-range thresholds from labelled-set prediction statistics.

    Classes without positives get the sentinel tau_pos = 1.0 (no confident
    positives possible), without negatives tau_neg = 0.0. If the two
    mid-ranges cross they are swapped, which widens the uncertain band over
    the conflicted interval.
    """
    preds = np.asarray(sup_preds, dtype=np.float64)
    labels = np.asarray(sup_labels)
    if preds.ndim != 2 or preds.shape != labels.shape:
        raise ValueError("sup_preds and sup_labels must share an (n, C) shape")
    if preds.shape[0] == 0:
        raise ValueError("empty supervised set")
    n, num_classes = preds.shape
    tau_pos = np.ones(num_classes)
    tau_neg = np.zeros(num_classes)
    n_pos = np.zeros(num_classes, dtype=np.int64)
    n_neg = np.zeros(num_classes, dtype=np.int64)
    for c in range(num_classes):
        pos_scores = preds[labels[:, c] == 1, c]
        neg_scores = preds[labels[:, c] == 0, c]
        n_pos[c] = pos_scores.size
        n_neg[c] = neg_scores.size
        if pos_scores.size:
            tau_pos[c] = 0.5 * (pos_scores.max() + pos_scores.min())
        if neg_scores.size:
            tau_neg[c] = 0.5 * (neg_scores.max() + neg_scores.min())
        if pos_scores.size and neg_scores.size and tau_pos[c] < tau_neg[c]:
            tau_pos[c], tau_neg[c] = tau_neg[c], tau_pos[c]
    return ClassThresholds(tau_pos, tau_neg, n_pos, n_neg)


def assign_pseudo_labels(preds: Array, thresholds: ClassThresholds) -> Array:
    """Map scores to {1, 0, -1}; both boundaries fall into the uncertain band."""
    preds = np.asarray(preds, dtype=np.float64)
    if preds.ndim != 2 or preds.shape[1] != thresholds.num_classes:
        raise ValueError("preds must be (n, C) matching the thresholds")
    if preds.size and (preds.min() < 0.0 or preds.max() > 1.0):
        raise ValueError("scores outside [0, 1]")
    out = np.full(preds.shape, -1, dtype=np.int8)
    out[preds > thresholds.tau_pos] = 1
    out[preds < thresholds.tau_neg] = 0
    return out


def threshold_rows(thresholds: ClassThresholds) -> list[dict]:
    """CSV-ready rows: class, taus, and labelled support counts."""
    return [{
        "class": c,
        "tau_pos": float(thresholds.tau_pos[c]),
        "tau_neg": float(thresholds.tau_neg[c]),
        "n_pos_support": int(thresholds.n_pos_support[c]),
        "n_neg_support": int(thresholds.n_neg_support[c]),
    } for c in range(thresholds.num_classes)]
