"""Training objectives: asymmetric loss, weighted pseudo-label loss,
class-wise InfoNCE over view pairs, and their sum."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import Array, Tensor, vstack

# Scores are clipped away from {0, 1} inside the differentiable losses so a
# saturated sigmoid cannot produce log(0); the clip plateau has zero gradient,
# which is the behaviour we want at saturation anyway.
SCORE_CLIP = 1e-12


@dataclass
class AslConfig:
    gamma_pos: float = 0.0
    gamma_neg: float = 4.0
    margin: float = 0.05

    def __post_init__(self):
        if self.gamma_pos < 0 or self.gamma_neg < 0:
            raise ValueError("focusing exponents must be non-negative")
        if not 0.0 <= self.margin < 1.0:
            raise ValueError("margin must lie in [0, 1)")


def asl(p: float, y: int, cfg: AslConfig) -> float:
    """Asymmetric loss for one score/label pair.

    Positive term: -(1-p)^gamma_pos * log(p). Negative term uses the margin-
    shifted probability p_m = max(p - margin, 0): -(p_m)^gamma_neg * log(1-p_m).
    """
    if not 0.0 < p < 1.0:
        raise ValueError("score must lie strictly inside (0, 1)")
    if y not in (0, 1):
        raise ValueError("label must be 0 or 1")
    if y == 1:
        return -((1.0 - p) ** cfg.gamma_pos) * math.log(p)
    p_m = max(p - cfg.margin, 0.0)
    return -(p_m ** cfg.gamma_neg) * math.log(1.0 - p_m)


def asl_terms(scores: Tensor, targets: Array, cfg: AslConfig) -> Tensor:
    """Elementwise asymmetric loss over a score tensor (differentiable)."""
    targets = np.asarray(targets, dtype=np.float64)
    if targets.shape != scores.shape:
        raise ValueError("targets must match the score shape")
    if targets.size and not np.isin(targets, (0.0, 1.0)).all():
        raise ValueError("targets must be binary")
    p = scores.clip(SCORE_CLIP, 1.0 - SCORE_CLIP)
    y = Tensor.constant(targets)
    pos_term = -((1.0 - p).power(cfg.gamma_pos) * p.log())
    p_m = (p - cfg.margin).relu()
    neg_term = -(p_m.power(cfg.gamma_neg) * (1.0 - p_m).log())
    return y * pos_term + (1.0 - y) * neg_term


def supervised_loss(scores: Tensor, targets: Array, cfg: AslConfig) -> Tensor:
    """Mean asymmetric loss over every (sample, class) entry."""
    return asl_terms(scores, targets, cfg).mean()


def pseudo_label_weights(score_values: Array, pseudo: Array, source) -> Array:
    """Per-entry weight matrix for the confident entries of a pseudo matrix.

    Detached from the graph: weights act as constants during optimisation.
    """
    score_values = np.asarray(score_values, dtype=np.float64)
    pseudo = np.asarray(pseudo)
    weights = np.zeros_like(score_values)
    conf = pseudo >= 0
    if conf.any():
        weights[conf] = source.weights(score_values[conf], pseudo[conf])
    return weights


def pseudo_loss(scores: Tensor, pseudo: Array, weights, cfg: AslConfig) -> Tensor:
    """Weighted mean asymmetric loss over confident pseudo-label entries.

    `pseudo` holds {1, 0, -1}; entries at -1 are excluded. `weights` is either
    an object with a .weights(p, y_hat) method (evaluated on the detached
    scores) or a precomputed matrix aligned with `scores`. Returns 0 when no
    entry is confident.
    """
    pseudo = np.asarray(pseudo)
    if pseudo.shape != scores.shape:
        raise ValueError("pseudo-label matrix must match the score shape")
    conf = pseudo >= 0
    n_conf = int(conf.sum())
    if n_conf == 0:
        return Tensor.constant(0.0)
    if hasattr(weights, "weights"):
        weights = pseudo_label_weights(scores.values, pseudo, weights)
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != scores.shape:
        raise ValueError("weight matrix must match the score shape")
    masked = np.where(conf, weights, 0.0)
    targets = (pseudo == 1).astype(np.float64)
    terms = asl_terms(scores, targets, cfg)
    return (terms * Tensor.constant(masked)).sum() * (1.0 / n_conf)


@dataclass
class ContrastiveBatch:
    """2B unit embeddings with a fixed-point-free involutive partner map."""

    embeddings: Tensor
    partner: Array
    temperature: float

    def __post_init__(self):
        self.partner = np.asarray(self.partner, dtype=np.intp)
        n = self.embeddings.shape[0]
        if n < 2 or n % 2 != 0:
            raise ValueError("a contrastive batch needs an even number >= 2 of embeddings")
        if self.partner.shape != (n,):
            raise ValueError("partner index must have one entry per embedding")
        if (self.partner == np.arange(n)).any() or (self.partner[self.partner] != np.arange(n)).any():
            raise ValueError("partner map must be an involution without fixed points")
        if self.temperature <= 0.0:
            raise ValueError("temperature must be positive")
        norms = np.linalg.norm(self.embeddings.values, axis=1)
        if norms.size and np.abs(norms - 1.0).max() > 1e-6:
            raise ValueError("embeddings must be unit-norm")


def paired_batch(weak: Tensor, strong: Tensor, temperature: float) -> ContrastiveBatch:
    """Stack weak/strong views so row i pairs with row i + B."""
    if weak.shape != strong.shape:
        raise ValueError("view embeddings must share a shape")
    b = weak.shape[0]
    partner = np.concatenate([np.arange(b) + b, np.arange(b)])
    return ContrastiveBatch(vstack([weak, strong]), partner, temperature)


def class_infonce(batch: ContrastiveBatch) -> Tensor:
    """Temperature-scaled InfoNCE over the batch.

    Each embedding's positive is its partner; every other embedding in the
    batch acts as a negative. The denominator excludes only the anchor itself.
    """
    z = batch.embeddings
    n = z.shape[0]
    sims = (z @ z.T) * (1.0 / batch.temperature)
    off_diagonal = Tensor.constant(1.0 - np.eye(n))
    log_denominator = (sims.exp() * off_diagonal).sum(axis=1).log()
    partner_mask = Tensor.constant(np.eye(n)[batch.partner])
    positive = (sims * partner_mask).sum(axis=1)
    return (log_denominator - positive).mean()


def total_loss(sup_term, pseudo_term, uncer_term) -> Tensor:
    """Sum of the three stage losses with unit coefficients."""
    terms = []
    for term in (sup_term, pseudo_term, uncer_term):
        t = term if isinstance(term, Tensor) else Tensor.constant(term)
        if t.values.size != 1:
            raise ValueError("loss terms must be scalars")
        terms.append(t)
    return terms[0] + terms[1] + terms[2]
