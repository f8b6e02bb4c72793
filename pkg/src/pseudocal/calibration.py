"""Confidence binning and correctness-likelihood weight tables.

The weight attached to a pseudo-label is the estimated probability that the
pseudo-label is correct, read from per-bin statistics gathered on a held-out
estimation pool and linearly interpolated between adjacent bins. An oracle
variant computes the same table from ground truth for evaluation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Array

DEFAULT_EPSILON = 1e-12


def bin_index(p: float, n_bins: int) -> int:
    """Index of the equal-width bin [k/K, (k+1)/K) containing p; p=1 -> K-1."""
    if n_bins < 2:
        raise ValueError("n_bins must be >= 2")
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"confidence {p} outside [0, 1]")
    return min(int(p * n_bins), n_bins - 1)


def bin_indices(p: Array, n_bins: int) -> Array:
    p = np.asarray(p, dtype=np.float64)
    if p.size and (p.min() < 0.0 or p.max() > 1.0):
        raise ValueError("confidences outside [0, 1]")
    return np.minimum((p * n_bins).astype(np.intp), n_bins - 1)


@dataclass
class BinStats:
    """Per-bin counts and proportions over (sample, class) pairs.

    For estimated tables n_pos/n_neg count true labels per bin and
    r_neg = 1 - r_pos. Oracle tables reuse the same fields but count
    pseudo-label directions, so the complement identity does not apply;
    `pos_occupied`/`neg_occupied` record each side's support.
    """

    n_bins: int
    n_pos: Array
    n_neg: Array
    r_pos: Array
    r_neg: Array
    pos_occupied: Array
    neg_occupied: Array
    epsilon: float = DEFAULT_EPSILON

    def occupied(self) -> Array:
        return self.pos_occupied | self.neg_occupied

    def edges(self, k: int) -> tuple[float, float]:
        return k / self.n_bins, (k + 1) / self.n_bins


def accumulate_bin_stats(preds: Array, labels: Array, n_bins: int = 20,
                         epsilon: float = DEFAULT_EPSILON) -> BinStats:
    """Count positives/negatives per confidence bin over all pairs."""
    preds = np.asarray(preds, dtype=np.float64).reshape(-1)
    labels = np.asarray(labels).reshape(-1)
    if preds.size == 0:
        raise ValueError("empty evaluation pool")
    if preds.shape != labels.shape:
        raise ValueError("preds and labels must be aligned")
    if not np.isin(labels, (0, 1)).all():
        raise ValueError("labels must be binary")
    k = bin_indices(preds, n_bins)
    n_pos = np.bincount(k[labels == 1], minlength=n_bins).astype(np.int64)
    n_neg = np.bincount(k[labels == 0], minlength=n_bins).astype(np.int64)
    r_pos = n_pos / (n_pos + n_neg + epsilon)
    occupied = (n_pos + n_neg) > 0
    return BinStats(n_bins=n_bins, n_pos=n_pos, n_neg=n_neg,
                    r_pos=r_pos, r_neg=1.0 - r_pos,
                    pos_occupied=occupied, neg_occupied=occupied.copy(),
                    epsilon=epsilon)


def _inherit(values: Array, occupied: Array) -> Array:
    """Fill unoccupied bins with the nearest occupied value (ties -> lower)."""
    if not occupied.any():
        raise ValueError("weight table has no occupied bins")
    idx = np.flatnonzero(occupied)
    out = values.copy()
    for k in np.flatnonzero(~occupied):
        nearest = idx[np.argmin(np.abs(idx - k))]  # argmin keeps the lower tie
        out[k] = values[nearest]
    return out


PROVENANCE_ESTIMATION = "estimated-from-D_est"
PROVENANCE_LABELED = "estimated-from-labeled"
PROVENANCE_ORACLE = "oracle"


@dataclass
class WeightTable:
    """Interpolated correctness-likelihood lookup built from BinStats."""

    stats: BinStats
    provenance: str
    _lookup_pos: Array = field(init=False, repr=False)
    _lookup_neg: Array = field(init=False, repr=False)

    def __post_init__(self):
        self._lookup_pos = _inherit(self.stats.r_pos, self.stats.pos_occupied)
        self._lookup_neg = _inherit(self.stats.r_neg, self.stats.neg_occupied)

    @property
    def n_bins(self) -> int:
        return self.stats.n_bins

    def lookup(self, p, y_hat) -> Array:
        """Weight w(p, y_hat) in [0, 1], linear between adjacent bin anchors.

        The anchor of bin k sits at its left edge; the last bin uses its own
        proportion for both anchors, so the lookup is constant there.
        """
        p = np.atleast_1d(np.asarray(p, dtype=np.float64))
        y_hat = np.atleast_1d(np.asarray(y_hat))
        if not np.isin(y_hat, (0, 1)).all():
            raise ValueError("y_hat must be binary")
        n = self.n_bins
        k = bin_indices(p, n)
        hi = np.minimum(k + 1, n - 1)
        r = np.where(y_hat == 1, self._lookup_pos[k], self._lookup_neg[k])
        r_next = np.where(y_hat == 1, self._lookup_pos[hi], self._lookup_neg[hi])
        w = n * (((k + 1) / n - p) * r + (p - k / n) * r_next)
        return np.clip(w, 0.0, 1.0)

    def lookup_scalar(self, p: float, y_hat: int) -> float:
        return float(self.lookup([p], [y_hat])[0])


def make_weight_table(preds: Array, labels: Array, n_bins: int = 20,
                      epsilon: float = DEFAULT_EPSILON,
                      provenance: str = PROVENANCE_ESTIMATION) -> WeightTable:
    return WeightTable(accumulate_bin_stats(preds, labels, n_bins, epsilon), provenance)


def oracle_weight_table(preds: Array, true_labels: Array, pseudo_labels: Array,
                        n_bins: int = 20,
                        epsilon: float = DEFAULT_EPSILON) -> WeightTable:
    """Per-bin fraction of correct pseudo-labels, split by direction.

    r_pos[k] is the correct fraction among pairs pseudo-labelled 1 in bin k,
    r_neg[k] the same for pseudo-label 0; uncertain (-1) pairs are ignored.
    Intended for evaluation harnesses with ground-truth access.
    """
    preds = np.asarray(preds, dtype=np.float64).reshape(-1)
    truth = np.asarray(true_labels).reshape(-1)
    pseudo = np.asarray(pseudo_labels).reshape(-1)
    if preds.size == 0:
        raise ValueError("empty evaluation pool")
    if not (preds.shape == truth.shape == pseudo.shape):
        raise ValueError("preds, labels and pseudo-labels must be aligned")
    k = bin_indices(preds, n_bins)
    pos = pseudo == 1
    neg = pseudo == 0
    n_pos = np.bincount(k[pos], minlength=n_bins).astype(np.int64)
    n_neg = np.bincount(k[neg], minlength=n_bins).astype(np.int64)
    correct_pos = np.bincount(k[pos & (truth == 1)], minlength=n_bins)
    correct_neg = np.bincount(k[neg & (truth == 0)], minlength=n_bins)
    with np.errstate(invalid="ignore"):
        r_pos = np.where(n_pos > 0, correct_pos / np.maximum(n_pos, 1), 0.0)
        r_neg = np.where(n_neg > 0, correct_neg / np.maximum(n_neg, 1), 0.0)
    stats = BinStats(n_bins=n_bins, n_pos=n_pos, n_neg=n_neg,
                     r_pos=r_pos, r_neg=r_neg,
                     pos_occupied=n_pos > 0, neg_occupied=n_neg > 0,
                     epsilon=epsilon)
    return WeightTable(stats, PROVENANCE_ORACLE)


def bce_weight_objective(weight: float, correctness_flags) -> float:
    """Mean binary cross-entropy between a constant weight and correctness.

    Minimised exactly at the empirical correct fraction, which is what makes
    the per-bin correct proportion the optimal pseudo-label weight.
    """
    flags = np.asarray(correctness_flags, dtype=np.float64).reshape(-1)
    if flags.size == 0:
        raise ValueError("correctness flags must be non-empty")
    if not np.isin(flags, (0, 1)).all():
        raise ValueError("correctness flags must be binary")
    if not 0.0 < weight < 1.0:
        raise ValueError("weight must lie strictly inside (0, 1)")
    return float(-(flags * math.log(weight) + (1.0 - flags) * math.log(1.0 - weight)).mean())


# -- weight sources used by the training loop ---------------------------------


class TableWeights:
    """Weights from an interpolated table (the calibrated policy)."""

    def __init__(self, table: WeightTable):
        self.table = table

    def weights(self, p: Array, y_hat: Array) -> Array:
        return self.table.lookup(p, y_hat)


class UniformWeights:
    """Every confident pseudo-label weighs 1."""

    def weights(self, p: Array, y_hat: Array) -> Array:
        return np.ones_like(np.asarray(p, dtype=np.float64))


class ConfidenceWeights:
    """Raw model confidence: w = p for positives, 1 - p for negatives."""

    def weights(self, p: Array, y_hat: Array) -> Array:
        p = np.asarray(p, dtype=np.float64)
        return np.where(np.asarray(y_hat) == 1, p, 1.0 - p)


def weight_table_rows(table: WeightTable) -> list[dict]:
    """CSV-ready rows: k, edges, counts, proportions, provenance."""
    rows = []
    for k in range(table.n_bins):
        lo, hi = table.stats.edges(k)
        rows.append({
            "k": k,
            "lower_edge": lo,
            "upper_edge": hi,
            "n_pos": int(table.stats.n_pos[k]),
            "n_neg": int(table.stats.n_neg[k]),
            "r_pos": float(table.stats.r_pos[k]),
            "r_neg": float(table.stats.r_neg[k]),
            "provenance": table.provenance,
        })
    return rows
