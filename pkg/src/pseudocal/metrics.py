"""Ranking metrics and reliability diagnostics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Array
from .calibration import WeightTable


def average_precision(scores: Array, labels: Array) -> float:
    """Precision averaged at each positive's rank (descending scores).

    Ties are broken by stable original order. Raises if the two arrays
    disagree in length or no positive label is present.
    """
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    labels = np.asarray(labels).reshape(-1)
    if scores.shape != labels.shape:
        raise ValueError("scores and labels must have equal length")
    n_pos = int((labels == 1).sum())
    if n_pos == 0:
        raise ValueError("average precision undefined without positives")
    order = np.argsort(-scores, kind="stable")
    ranked = labels[order] == 1
    hits = np.cumsum(ranked)
    precision_at_hits = hits[ranked] / (np.flatnonzero(ranked) + 1)
    return float(precision_at_hits.mean())


def classwise_average_precision(scores: Array, labels: Array) -> tuple[Array, list[int]]:
    """Per-class AP with NaN for classes lacking positives (returned separately)."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 2:
        raise ValueError("scores and labels must share an (n, C) shape")
    aps = np.full(scores.shape[1], np.nan)
    skipped = []
    for c in range(scores.shape[1]):
        if (labels[:, c] == 1).any():
            aps[c] = average_precision(scores[:, c], labels[:, c])
        else:
            skipped.append(c)
    return aps, skipped


def mean_average_precision(scores: Array, labels: Array) -> float:
    """Unweighted mean AP over the classes with at least one positive."""
    aps, skipped = classwise_average_precision(scores, labels)
    valid = aps[~np.isnan(aps)]
    if valid.size == 0:
        raise ValueError("no class with positives to evaluate")
    if skipped:
        import logging
        logging.getLogger(__name__).warning("classes without positives skipped: %s", skipped)
    return float(valid.mean())


@dataclass
class ReliabilityRow:
    k: int
    lower_edge: float
    upper_edge: float
    estimated_r_pos: float
    oracle_w: float
    n_estimated: int
    n_oracle: int

    @property
    def co_occupied(self) -> bool:
        return self.n_estimated > 0 and self.n_oracle > 0


@dataclass
class ReliabilityReport:
    rows: list[ReliabilityRow]
    max_gap: float
    n_co_occupied: int

    def to_rows(self) -> list[dict]:
        return [{
            "k": r.k,
            "lower_edge": r.lower_edge,
            "upper_edge": r.upper_edge,
            "estimated_r_pos": r.estimated_r_pos,
            "oracle_w": r.oracle_w,
            "n_estimated": r.n_estimated,
            "n_oracle": r.n_oracle,
            "co_occupied": r.co_occupied,
        } for r in self.rows]


def reliability_report(estimated: WeightTable, oracle: WeightTable) -> ReliabilityReport:
    """Pair estimated positive proportions with oracle correctness per bin.

    The L-infinity gap is taken over co-occupied bins: bins holding at least
    one estimation pair and at least one positively pseudo-labelled oracle
    pair. NaN when no bin qualifies.
    """
    if estimated.n_bins != oracle.n_bins:
        raise ValueError("weight tables disagree on bin count")
    rows = []
    gaps = []
    for k in range(estimated.n_bins):
        lo, hi = estimated.stats.edges(k)
        n_est = int(estimated.stats.n_pos[k] + estimated.stats.n_neg[k])
        n_orc = int(oracle.stats.n_pos[k])
        row = ReliabilityRow(k=k, lower_edge=lo, upper_edge=hi,
                             estimated_r_pos=float(estimated.stats.r_pos[k]),
                             oracle_w=float(oracle.stats.r_pos[k]),
                             n_estimated=n_est, n_oracle=n_orc)
        rows.append(row)
        if row.co_occupied:
            gaps.append(abs(row.estimated_r_pos - row.oracle_w))
    max_gap = max(gaps) if gaps else float("nan")
    return ReliabilityReport(rows=rows, max_gap=max_gap, n_co_occupied=len(gaps))


def curve_stability_gap(first: WeightTable, second: WeightTable) -> tuple[float, int]:
    """L-infinity distance between two correctness curves over shared support.

    Compares positive-side values on bins occupied (positive side) in both
    tables; used for the labelled-rate stability diagnostic.
    """
    if first.n_bins != second.n_bins:
        raise ValueError("weight tables disagree on bin count")
    both = first.stats.pos_occupied & second.stats.pos_occupied
    if not both.any():
        return float("nan"), 0
    gap = np.abs(first.stats.r_pos[both] - second.stats.r_pos[both]).max()
    return float(gap), int(both.sum())
