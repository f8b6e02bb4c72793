"""End-to-end training: warm-up, per-epoch weight/threshold refresh with
pseudo-label optimisation, and head-only fine-tuning on the estimation set."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Iterator

import numpy as np

from .autodiff import Array, Tensor, vstack
from .calibration import (ConfidenceWeights, PROVENANCE_ESTIMATION,
                          PROVENANCE_LABELED, TableWeights, UniformWeights,
                          WeightTable, make_weight_table, oracle_weight_table)
from .data import Dataset, SsmllSplits, augment
from .losses import (AslConfig, class_infonce, paired_batch,
                     pseudo_label_weights, pseudo_loss, supervised_loss,
                     total_loss)
from .metrics import mean_average_precision
from .model import ModelConfig, ModelGraph, ModelState
from .optim import AdamWConfig, OptimState, adamw_step
from .thresholding import (ClassThresholds, assign_pseudo_labels,
                           derive_thresholds)

logger = logging.getLogger(__name__)

POLICY_UNIFORM = "uniform"
POLICY_CONFIDENCE = "confidence"
POLICY_LABELED = "labeled"
POLICY_ESTIMATED = "estimated"
POLICY_ORACLE = "oracle"
POLICIES = (POLICY_UNIFORM, POLICY_CONFIDENCE, POLICY_LABELED,
            POLICY_ESTIMATED, POLICY_ORACLE)


@dataclass
class TrainConfig:
    warmup_epochs: int = 5
    epochs: int = 20
    finetune_epochs: int = 20
    batch_size: int = 128
    finetune_batch_size: int = 32
    lr: float = 1e-3
    finetune_lr: float | None = None
    beta1: float = 0.9
    beta2: float = 0.999
    opt_eps: float = 1e-8
    weight_decay: float = 1e-4
    ema_decay: float = 0.9997
    n_bins: int = 20
    bin_epsilon: float = 1e-12
    temperature: float = 0.5
    asl: AslConfig = field(default_factory=AslConfig)
    warmup_contrastive: bool = True
    uncertain_pair_cap: int = 256
    train_augment: bool = True
    eval_every: int = 0
    seed: int = 0

    def __post_init__(self):
        if min(self.warmup_epochs, self.epochs, self.finetune_epochs) < 0:
            raise ValueError("epoch counts must be >= 0")
        if self.n_bins < 2:
            raise ValueError("n_bins must be >= 2")
        if min(self.batch_size, self.finetune_batch_size) < 1:
            raise ValueError("batch sizes must be >= 1")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")

    def optimizer(self) -> AdamWConfig:
        return AdamWConfig(lr=self.lr, beta1=self.beta1, beta2=self.beta2,
                           eps=self.opt_eps, weight_decay=self.weight_decay)


@dataclass
class EpochReport:
    epoch: int
    l_sup: float
    l_pseudo: float
    l_uncer: float
    l_total: float
    n_confident_pos: int
    n_confident_neg: int
    n_uncertain: int
    tau_pos: list[float]
    tau_neg: list[float]
    weight_provenance: str | None
    weight_r_pos: list[float] | None
    weight_occupied: list[bool] | None
    map_test: float | None = None

    def to_dict(self) -> dict:
        return {
            "epoch": self.epoch,
            "l_sup": self.l_sup,
            "l_pseudo": self.l_pseudo,
            "l_uncer": self.l_uncer,
            "l_total": self.l_total,
            "n_confident_pos": self.n_confident_pos,
            "n_confident_neg": self.n_confident_neg,
            "n_uncertain": self.n_uncertain,
            "tau_pos": self.tau_pos,
            "tau_neg": self.tau_neg,
            "weight_provenance": self.weight_provenance,
            "weight_r_pos": self.weight_r_pos,
            "weight_occupied": self.weight_occupied,
            "map_test": self.map_test,
        }


class _SupCycler:
    """Endless reshuffled stream of supervised row positions."""

    def __init__(self, n: int, rng: np.random.Generator):
        self.n = n
        self.rng = rng
        self._order = rng.permutation(n)
        self._at = 0

    def take(self, k: int) -> Array:
        out = []
        while k > 0:
            if self._at == self.n:
                self._order = self.rng.permutation(self.n)
                self._at = 0
            grab = min(k, self.n - self._at)
            out.append(self._order[self._at:self._at + grab])
            self._at += grab
            k -= grab
        return np.concatenate(out)


def _batches(order: Array, batch_size: int) -> Iterator[Array]:
    for start in range(0, order.shape[0], batch_size):
        yield order[start:start + batch_size]


def _apply_step(model: ModelState, graph: ModelGraph, loss: Tensor) -> None:
    loss.backward()
    adamw_step(model.params, graph.gradients(), model.opt_state)
    model.ema.update(model.params)


def _contrastive_term(graph: ModelGraph, features: Array, entries: Array,
                      cfg: TrainConfig, rng: np.random.Generator) -> Tensor | None:
    """InfoNCE over weak/strong view embeddings of (row, class) entries."""
    if entries.shape[0] == 0:
        return None
    if entries.shape[0] > cfg.uncertain_pair_cap:
        keep = rng.choice(entries.shape[0], size=cfg.uncertain_pair_cap, replace=False)
        entries = entries[np.sort(keep)]
    weak = augment(features, "weak", seed=int(rng.integers(2**63)))
    strong = augment(features, "strong", seed=int(rng.integers(2**63)))
    h_weak = graph.hidden(weak)
    h_strong = graph.hidden(strong)
    weak_parts, strong_parts = [], []
    for c in np.unique(entries[:, 1]):
        rows = entries[entries[:, 1] == c, 0]
        weak_parts.append(graph.class_embedding(h_weak.take_rows(rows), int(c)))
        strong_parts.append(graph.class_embedding(h_strong.take_rows(rows), int(c)))
    batch = paired_batch(vstack(weak_parts), vstack(strong_parts), cfg.temperature)
    return class_infonce(batch)


def _make_weight_source(policy: str, model: ModelState, dataset: Dataset,
                        splits: SsmllSplits, cfg: TrainConfig,
                        pseudo: Array) -> tuple[object, WeightTable | None]:
    if policy == POLICY_UNIFORM:
        return UniformWeights(), None
    if policy == POLICY_CONFIDENCE:
        return ConfidenceWeights(), None
    if policy == POLICY_ESTIMATED:
        preds = model.predict_scores(dataset.features[splits.est_idx], use_ema=True)
        table = make_weight_table(preds, splits.est_labels("weight_estimation"),
                                  cfg.n_bins, cfg.bin_epsilon, PROVENANCE_ESTIMATION)
        return TableWeights(table), table
    if policy == POLICY_LABELED:
        preds = model.predict_scores(dataset.features[splits.sup_idx], use_ema=True)
        table = make_weight_table(preds, splits.sup_labels(),
                                  cfg.n_bins, cfg.bin_epsilon, PROVENANCE_LABELED)
        return TableWeights(table), table
    if policy == POLICY_ORACLE:
        preds = model.predict_scores(dataset.features[splits.unlabeled_idx], use_ema=True)
        truth = splits.unlabeled_truth("oracle")
        pseudo_u = pseudo[:splits.n_unlabeled]
        table = oracle_weight_table(preds, truth, pseudo_u, cfg.n_bins, cfg.bin_epsilon)
        return TableWeights(table), table
    raise ValueError(f"unknown weighting policy {policy!r}")


def train_epoch(model: ModelState, dataset: Dataset, splits: SsmllSplits,
                cfg: TrainConfig, rng: np.random.Generator, epoch: int,
                policy: str = POLICY_ESTIMATED,
                thresholds_override: ClassThresholds | None = None,
                test_set: Dataset | None = None) -> EpochReport:
    """One pass of the pseudo-labelling loop.

    Refreshes the weight table and class thresholds from EMA predictions,
    assigns trichotomous pseudo-labels to the unified unlabelled pool, then
    minimises supervised + weighted-pseudo + contrastive loss over batches
    that draw equally from the supervised and unlabelled pools.
    """
    features = dataset.features
    sup_idx = splits.sup_idx
    unsup_idx = splits.unsup_idx
    sup_labels = splits.sup_labels()

    if thresholds_override is not None:
        thresholds = thresholds_override
    else:
        sup_preds = model.predict_scores(features[sup_idx], use_ema=True)
        thresholds = derive_thresholds(sup_preds, sup_labels)

    if unsup_idx.shape[0]:
        unsup_preds = model.predict_scores(features[unsup_idx], use_ema=True)
        pseudo = assign_pseudo_labels(unsup_preds, thresholds)
    else:
        unsup_preds = np.zeros((0, dataset.n_classes))
        pseudo = np.zeros((0, dataset.n_classes), dtype=np.int8)

    source, table = _make_weight_source(policy, model, dataset, splits, cfg, pseudo)
    if table is not None and not table.stats.occupied().any():
        raise RuntimeError(f"weight table has no occupied bins at epoch {epoch}")
    # Weights are fixed for the epoch, looked up at the same EMA confidences
    # that produced the pseudo-labels.
    epoch_weights = pseudo_label_weights(unsup_preds, pseudo, source)

    sup_cycler = _SupCycler(sup_idx.shape[0], rng)
    sums = {"sup": 0.0, "pseudo": 0.0, "uncer": 0.0, "total": 0.0}
    steps = 0
    outer = rng.permutation(unsup_idx.shape[0]) if unsup_idx.shape[0] else None
    if outer is None:
        batch_iter = ((None, rows) for rows in _batches(rng.permutation(sup_idx.shape[0]),
                                                        cfg.batch_size))
    else:
        batch_iter = ((rows, sup_cycler.take(rows.shape[0]))
                      for rows in _batches(outer, cfg.batch_size))

    for unsup_rows, sup_rows in batch_iter:
        graph = model.graph(use_ema=False)
        sup_x = features[sup_idx[sup_rows]]
        if cfg.train_augment:
            sup_x = augment(sup_x, "weak", seed=int(rng.integers(2**63)))
        sup_scores = graph.scores(sup_x)
        l_sup = supervised_loss(sup_scores, sup_labels[sup_rows], cfg.asl)
        l_pseudo: Tensor | float = 0.0
        l_uncer: Tensor | float = 0.0
        if unsup_rows is not None:
            batch_pseudo = pseudo[unsup_rows]
            unsup_x = features[unsup_idx[unsup_rows]]
            pseudo_x = unsup_x
            if cfg.train_augment:
                pseudo_x = augment(unsup_x, "strong", seed=int(rng.integers(2**63)))
            unsup_scores = graph.scores(pseudo_x)
            l_pseudo = pseudo_loss(unsup_scores, batch_pseudo,
                                   epoch_weights[unsup_rows], cfg.asl)
            entries = np.argwhere(batch_pseudo == -1)
            term = _contrastive_term(graph, unsup_x, entries, cfg, rng)
            if term is not None:
                l_uncer = term
        loss = total_loss(l_sup, l_pseudo, l_uncer)
        _apply_step(model, graph, loss)
        sums["sup"] += l_sup.item()
        sums["pseudo"] += l_pseudo.item() if isinstance(l_pseudo, Tensor) else float(l_pseudo)
        sums["uncer"] += l_uncer.item() if isinstance(l_uncer, Tensor) else float(l_uncer)
        sums["total"] += loss.item()
        steps += 1

    map_test = None
    if test_set is not None and cfg.eval_every and (epoch + 1) % cfg.eval_every == 0:
        map_test = evaluate_map(model, test_set)

    return EpochReport(
        epoch=epoch,
        l_sup=sums["sup"] / steps,
        l_pseudo=sums["pseudo"] / steps,
        l_uncer=sums["uncer"] / steps,
        l_total=sums["total"] / steps,
        n_confident_pos=int((pseudo == 1).sum()),
        n_confident_neg=int((pseudo == 0).sum()),
        n_uncertain=int((pseudo == -1).sum()),
        tau_pos=[float(t) for t in thresholds.tau_pos],
        tau_neg=[float(t) for t in thresholds.tau_neg],
        weight_provenance=table.provenance if table is not None else None,
        weight_r_pos=[float(r) for r in table.stats.r_pos] if table is not None else None,
        weight_occupied=[bool(o) for o in table.stats.occupied()] if table is not None else None,
        map_test=map_test,
    )


def warmup(model: ModelState, dataset: Dataset, splits: SsmllSplits,
           cfg: TrainConfig, rng: np.random.Generator,
           contrastive: bool | None = None) -> list[float]:
    """Supervised warm-up; optionally adds view-pair InfoNCE over all data.

    Returns the per-epoch mean supervised loss.
    """
    if contrastive is None:
        contrastive = cfg.warmup_contrastive
    features = dataset.features
    sup_idx = splits.sup_idx
    sup_labels = splits.sup_labels()
    pool_idx = np.sort(np.concatenate([sup_idx, splits.unsup_idx]))
    epoch_losses = []
    for _ in range(cfg.warmup_epochs):
        total, steps = 0.0, 0
        if contrastive:
            sup_cycler = _SupCycler(sup_idx.shape[0], rng)
            for pool_rows in _batches(rng.permutation(pool_idx.shape[0]), cfg.batch_size):
                graph = model.graph(use_ema=False)
                sup_rows = sup_cycler.take(pool_rows.shape[0])
                sup_x = features[sup_idx[sup_rows]]
                if cfg.train_augment:
                    sup_x = augment(sup_x, "weak", seed=int(rng.integers(2**63)))
                l_sup = supervised_loss(graph.scores(sup_x), sup_labels[sup_rows], cfg.asl)
                n_rows = pool_rows.shape[0]
                all_entries = np.stack([
                    np.repeat(np.arange(n_rows), dataset.n_classes),
                    np.tile(np.arange(dataset.n_classes), n_rows),
                ], axis=1)
                term = _contrastive_term(graph, features[pool_idx[pool_rows]],
                                         all_entries, cfg, rng)
                loss = total_loss(l_sup, 0.0, term if term is not None else 0.0)
                _apply_step(model, graph, loss)
                total += l_sup.item()
                steps += 1
        else:
            for sup_rows in _batches(rng.permutation(sup_idx.shape[0]), cfg.batch_size):
                graph = model.graph(use_ema=False)
                sup_x = features[sup_idx[sup_rows]]
                if cfg.train_augment:
                    sup_x = augment(sup_x, "weak", seed=int(rng.integers(2**63)))
                l_sup = supervised_loss(graph.scores(sup_x), sup_labels[sup_rows], cfg.asl)
                _apply_step(model, graph, l_sup)
                total += l_sup.item()
                steps += 1
        epoch_losses.append(total / steps)
    return epoch_losses


def finetune_head(model: ModelState, dataset: Dataset, splits: SsmllSplits,
                  cfg: TrainConfig, rng: np.random.Generator) -> list[float]:
    """Head-only fine-tuning on the estimation set.

    The backbone is frozen and its EMA features are precomputed once, so the
    classifier head is optimised against exactly the representation used at
    evaluation time. The head's EMA shadow is synced to the tuned head at the
    end of the stage. Returns the full-set loss before training and after
    each epoch.
    """
    if splits.est_idx.shape[0] == 0:
        raise ValueError("fine-tuning requires a non-empty estimation set")
    if cfg.finetune_epochs == 0:
        return []
    est_labels = splits.est_labels("finetune")
    hidden = model.graph(use_ema=True).hidden(dataset.features[splits.est_idx]).values
    model.set_trainable(head_only=True)
    opt_cfg = replace(cfg.optimizer(), lr=cfg.finetune_lr if cfg.finetune_lr else cfg.lr)
    opt_state = OptimState.for_params(model.params, opt_cfg)

    def full_loss() -> float:
        graph = model.graph(use_ema=False)
        scores = graph.scores_from_hidden(Tensor.constant(hidden))
        return supervised_loss(scores, est_labels, cfg.asl).item()

    losses = [full_loss()]
    n_est = splits.est_idx.shape[0]
    for _ in range(cfg.finetune_epochs):
        for rows in _batches(rng.permutation(n_est), cfg.finetune_batch_size):
            graph = model.graph(use_ema=False)
            scores = graph.scores_from_hidden(Tensor.constant(hidden[rows]))
            loss = supervised_loss(scores, est_labels[rows], cfg.asl)
            loss.backward()
            adamw_step(model.params, graph.gradients(), opt_state)
        losses.append(full_loss())
    model.ema.sync(model.params, names=model.head_names())
    model.set_trainable(head_only=False)
    return losses


def _supervised_baseline(model: ModelState, dataset: Dataset, splits: SsmllSplits,
                         cfg: TrainConfig, rng: np.random.Generator) -> list[float]:
    """Supervised-set-only training, compute-matched to the full pipeline.

    Runs warmup_epochs + epochs epochs with the same number of optimizer
    steps per epoch as the pseudo-labelling loop would take, cycling D_sup
    batches, so baseline comparisons measure the data strategy rather than
    the step budget.
    """
    features = dataset.features
    sup_idx = splits.sup_idx
    sup_labels = splits.sup_labels()
    pool = max(splits.unsup_idx.shape[0], sup_idx.shape[0])
    steps_per_epoch = int(np.ceil(pool / cfg.batch_size))
    cycler = _SupCycler(sup_idx.shape[0], rng)
    epoch_losses = []
    for _ in range(cfg.warmup_epochs + cfg.epochs):
        total = 0.0
        for _ in range(steps_per_epoch):
            graph = model.graph(use_ema=False)
            rows = cycler.take(min(cfg.batch_size, pool))
            sup_x = features[sup_idx[rows]]
            if cfg.train_augment:
                sup_x = augment(sup_x, "weak", seed=int(rng.integers(2**63)))
            loss = supervised_loss(graph.scores(sup_x), sup_labels[rows], cfg.asl)
            _apply_step(model, graph, loss)
            total += loss.item()
        epoch_losses.append(total / steps_per_epoch)
    return epoch_losses


def evaluate_map(model: ModelState, test_set: Dataset, use_ema: bool = True) -> float:
    scores = model.predict_scores(test_set.features, use_ema=use_ema)
    return mean_average_precision(scores, test_set.labels)


@dataclass
class PipelineResult:
    model: ModelState
    policy: str
    epoch_reports: list[EpochReport]
    warmup_losses: list[float]
    finetune_losses: list[float]
    test_map: float | None
    est_table: WeightTable | None = None
    oracle_table: WeightTable | None = None
    thresholds: ClassThresholds | None = None


def _reliability_tables(model: ModelState, dataset: Dataset, splits: SsmllSplits,
                        cfg: TrainConfig) -> tuple[WeightTable, WeightTable, ClassThresholds]:
    """Estimated and oracle weight tables from the current EMA model."""
    est_preds = model.predict_scores(dataset.features[splits.est_idx], use_ema=True)
    est_table = make_weight_table(est_preds, splits.est_labels("weight_estimation"),
                                  cfg.n_bins, cfg.bin_epsilon, PROVENANCE_ESTIMATION)
    sup_preds = model.predict_scores(dataset.features[splits.sup_idx], use_ema=True)
    thresholds = derive_thresholds(sup_preds, splits.sup_labels())
    u_preds = model.predict_scores(dataset.features[splits.unlabeled_idx], use_ema=True)
    pseudo_u = assign_pseudo_labels(u_preds, thresholds)
    oracle = oracle_weight_table(u_preds, splits.unlabeled_truth("oracle"),
                                 pseudo_u, cfg.n_bins, cfg.bin_epsilon)
    return est_table, oracle, thresholds


def run_pipeline(dataset: Dataset, splits: SsmllSplits, model_cfg: ModelConfig,
                 cfg: TrainConfig, policy: str = POLICY_ESTIMATED,
                 test_set: Dataset | None = None, supervised_only: bool = False,
                 collect_reliability: bool = False) -> PipelineResult:
    """Warm-up, pseudo-labelling epochs, and head fine-tuning, in order.

    `supervised_only` trains the same number of epochs purely on D_sup (no
    pseudo-labels, contrastive term, or fine-tuning) as a baseline.
    `collect_reliability` snapshots estimated and oracle weight tables at the
    end of the pseudo-labelling stage.
    """
    seq = np.random.SeedSequence(cfg.seed)
    init_seed, warm_seed, main_seed, ft_seed = seq.spawn(4)
    model = ModelState.build(model_cfg, cfg.optimizer(), cfg.ema_decay, seed=init_seed)

    if supervised_only:
        warm_losses = _supervised_baseline(model, dataset, splits, cfg,
                                           np.random.default_rng(warm_seed))
        test_map = evaluate_map(model, test_set) if test_set is not None else None
        return PipelineResult(model=model, policy="supervised-only",
                              epoch_reports=[], warmup_losses=warm_losses,
                              finetune_losses=[], test_map=test_map)

    warm_losses = warmup(model, dataset, splits, cfg, np.random.default_rng(warm_seed))
    rng = np.random.default_rng(main_seed)
    reports = []
    for epoch in range(cfg.epochs):
        report = train_epoch(model, dataset, splits, cfg, rng, epoch,
                             policy=policy, test_set=test_set)
        logger.info("epoch %d: total=%.4f conf=%d uncer=%d", epoch, report.l_total,
                    report.n_confident_pos + report.n_confident_neg,
                    report.n_uncertain)
        reports.append(report)

    est_table = oracle_table = thresholds = None
    if collect_reliability:
        est_table, oracle_table, thresholds = _reliability_tables(model, dataset,
                                                                  splits, cfg)

    ft_losses = finetune_head(model, dataset, splits, cfg,
                              np.random.default_rng(ft_seed))
    test_map = evaluate_map(model, test_set) if test_set is not None else None
    return PipelineResult(model=model, policy=policy, epoch_reports=reports,
                          warmup_losses=warm_losses, finetune_losses=ft_losses,
                          test_map=test_map, est_table=est_table,
                          oracle_table=oracle_table, thresholds=thresholds)
