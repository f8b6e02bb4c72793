"""scikit-learn compatible front end.

`CalibratedPseudoLabelClassifier` wraps the full training pipeline behind the
usual fit/predict surface so it composes with sklearn tooling (clone,
pipelines, grid search). Unlabelled rows are marked the sklearn way: every
entry of the row set to -1.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .data import Dataset, GenConfig, SsmllSplits
from .losses import AslConfig
from .model import ModelConfig
from .training import POLICY_ESTIMATED, TrainConfig, run_pipeline


class CalibratedPseudoLabelClassifier(BaseEstimator):
    """Semi-supervised multi-label classifier with calibrated pseudo-label weights.

    Parameters mirror TrainConfig/ModelConfig; `est_fraction` controls how
    much of the labelled data is held out to estimate pseudo-label
    correctness. Rows of y that are entirely -1 are treated as unlabelled.
    """

    def __init__(self, hidden_dim=64, hidden_layers=2, embedding_dim=16,
                 est_fraction=0.2, warmup_epochs=5, epochs=20,
                 finetune_epochs=20, batch_size=128, finetune_batch_size=32,
                 lr=1e-3, weight_decay=1e-4, ema_decay=0.9997, n_bins=20,
                 temperature=0.5, gamma_pos=0.0, gamma_neg=4.0, margin=0.05,
                 warmup_contrastive=True, weight_policy=POLICY_ESTIMATED,
                 random_state=0):
        self.hidden_dim = hidden_dim
        self.hidden_layers = hidden_layers
        self.embedding_dim = embedding_dim
        self.est_fraction = est_fraction
        self.warmup_epochs = warmup_epochs
        self.epochs = epochs
        self.finetune_epochs = finetune_epochs
        self.batch_size = batch_size
        self.finetune_batch_size = finetune_batch_size
        self.lr = lr
        self.weight_decay = weight_decay
        self.ema_decay = ema_decay
        self.n_bins = n_bins
        self.temperature = temperature
        self.gamma_pos = gamma_pos
        self.gamma_neg = gamma_neg
        self.margin = margin
        self.warmup_contrastive = warmup_contrastive
        self.weight_policy = weight_policy
        self.random_state = random_state

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            warmup_epochs=self.warmup_epochs, epochs=self.epochs,
            finetune_epochs=self.finetune_epochs, batch_size=self.batch_size,
            finetune_batch_size=self.finetune_batch_size, lr=self.lr,
            weight_decay=self.weight_decay, ema_decay=self.ema_decay,
            n_bins=self.n_bins, temperature=self.temperature,
            asl=AslConfig(gamma_pos=self.gamma_pos, gamma_neg=self.gamma_neg,
                          margin=self.margin),
            warmup_contrastive=self.warmup_contrastive, seed=self.random_state)

    def fit(self, X, y):
        """Fit on a mixed pool; rows of y that are all -1 are unlabelled."""
        X = check_array(X, dtype=np.float64)
        y = check_array(y, dtype=None, ensure_2d=True)
        if y.shape[0] != X.shape[0]:
            raise ValueError("X and y disagree on sample count")
        y = np.asarray(y)
        unlabeled = (y == -1).all(axis=1)
        partially_marked = (y == -1).any(axis=1) & ~unlabeled
        if partially_marked.any():
            raise ValueError("rows must be fully labelled or fully -1")
        labeled_idx = np.flatnonzero(~unlabeled)
        if labeled_idx.size == 0:
            raise ValueError("at least one labelled row is required")
        if not np.isin(y[labeled_idx], (0, 1)).all():
            raise ValueError("labelled entries must be binary")

        rng = np.random.default_rng(self.random_state)
        perm = rng.permutation(labeled_idx)
        n_est = max(1, int(round(perm.size * self.est_fraction)))
        if n_est >= perm.size:
            raise ValueError("est_fraction leaves no supervised rows")
        splits = SsmllSplits(
            sup_idx=np.sort(perm[n_est:]),
            est_idx=np.sort(perm[:n_est]),
            unlabeled_idx=np.flatnonzero(unlabeled),
            rho=labeled_idx.size / X.shape[0],
            est_fraction=self.est_fraction,
            seed=self.random_state,
        )
        labels = np.where(y == -1, 0, y).astype(np.int8)
        splits.attach_labels(labels)
        dataset = Dataset(features=X, labels=labels,
                          config=GenConfig(n_samples=X.shape[0],
                                           n_features=X.shape[1],
                                           n_classes=y.shape[1],
                                           seed=self.random_state))
        model_cfg = ModelConfig(input_dim=X.shape[1], num_classes=y.shape[1],
                                hidden_dim=self.hidden_dim,
                                hidden_layers=self.hidden_layers,
                                embedding_dim=self.embedding_dim)
        result = run_pipeline(dataset, splits, model_cfg, self._train_config(),
                              policy=self.weight_policy)
        self.model_ = result.model
        self.epoch_reports_ = result.epoch_reports
        self.n_features_in_ = X.shape[1]
        self.n_classes_ = y.shape[1]
        return self

    def predict_proba(self, X):
        """Class-wise relevance scores in (0, 1), shape (n, C)."""
        check_is_fitted(self, "model_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        return self.model_.predict_scores(X, use_ema=True)

    def predict(self, X, threshold: float = 0.5):
        return (self.predict_proba(X) >= threshold).astype(np.int8)
