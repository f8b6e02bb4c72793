"""Synthetic multi-label data, the labelled/estimation split, and noise-based
augmentation surrogates.

Samples share latent factors, which induces label correlation: class logits
are linear in a latent vector h, labels are Bernoulli draws from the sigmoid
posterior, and features are a noisy linear mixing of h. Everything is fully
determined by the config seed.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .autodiff import Array

# Scale of the per-class latent weight vectors. Chosen so the label posterior
# sigmoid(a_c . h + b_c) keeps genuine aleatoric spread instead of collapsing
# to near-deterministic labels.
CLASS_WEIGHT_SCALE = 0.55


@dataclass
class GenConfig:
    n_samples: int
    n_features: int
    n_classes: int
    latent_dim: int = 16
    bias_low: float = -3.2
    bias_high: float = -0.4
    noise_sigma: float = 0.35
    seed: int = 0

    def __post_init__(self):
        if min(self.n_samples, self.n_features, self.n_classes, self.latent_dim) < 1:
            raise ValueError("all dimensions must be >= 1")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if self.bias_high < self.bias_low:
            raise ValueError("bias range is inverted")


@dataclass
class Dataset:
    features: Array
    labels: Array
    config: GenConfig

    def __post_init__(self):
        if self.features.shape[0] != self.labels.shape[0]:
            raise ValueError("features and labels disagree on sample count")

    @property
    def n_samples(self) -> int:
        return self.features.shape[0]

    @property
    def n_classes(self) -> int:
        return self.labels.shape[1]


def generate_synthetic(cfg: GenConfig) -> Dataset:
    """Draw a dataset from the latent-factor model.

    Independent child streams are used per section (task parameters, latents,
    label noise, feature noise) so a longer draw with the same seed extends a
    shorter one row-for-row; slicing off extra rows yields a valid held-out
    set from the identical task.
    """
    seq = np.random.SeedSequence(cfg.seed)
    rng_task, rng_latent, rng_label, rng_noise = [np.random.default_rng(s)
                                                  for s in seq.spawn(4)]
    class_weights = rng_task.normal(0.0, CLASS_WEIGHT_SCALE,
                                    size=(cfg.latent_dim, cfg.n_classes))
    class_bias = rng_task.uniform(cfg.bias_low, cfg.bias_high, size=cfg.n_classes)
    mixing = rng_task.normal(0.0, 1.0 / np.sqrt(cfg.latent_dim),
                             size=(cfg.latent_dim, cfg.n_features))
    latents = rng_latent.standard_normal((cfg.n_samples, cfg.latent_dim))
    logits = latents @ class_weights + class_bias
    posterior = 1.0 / (1.0 + np.exp(-logits))
    labels = (posterior > rng_label.uniform(size=posterior.shape)).astype(np.int8)
    features = latents @ mixing
    if cfg.noise_sigma > 0:
        features = features + cfg.noise_sigma * rng_noise.standard_normal(features.shape)
    return Dataset(features=features, labels=labels, config=cfg)


def train_test_datasets(cfg: GenConfig, n_test: int) -> tuple[Dataset, Dataset]:
    """Training pool plus a held-out test set from one draw of the same task."""
    if n_test < 1:
        raise ValueError("n_test must be >= 1")
    full = generate_synthetic(replace(cfg, n_samples=cfg.n_samples + n_test))
    train = Dataset(full.features[:cfg.n_samples], full.labels[:cfg.n_samples], cfg)
    test = Dataset(full.features[cfg.n_samples:], full.labels[cfg.n_samples:],
                   replace(cfg, n_samples=n_test))
    return train, test


class LabelAccessError(RuntimeError):
    """Raised when ground truth is requested for a disallowed purpose."""


EST_PURPOSES = ("weight_estimation", "finetune")
UNLABELED_PURPOSES = ("oracle",)


@dataclass
class SsmllSplits:
    """Index partition D_sup / D_est / D_u with audited label access.

    D_unsup = D_u + D_est. Ground truth for D_est may be read for per-bin
    weight counting at any time and for gradient supervision only in the
    fine-tuning stage; D_u ground truth is reserved for oracle evaluation.
    Every read is recorded in `audit_log` so tests can verify the ordering.
    """

    sup_idx: Array
    est_idx: Array
    unlabeled_idx: Array
    rho: float
    est_fraction: float
    seed: int
    _labels: Array | None = None
    audit_log: list = field(default_factory=list)

    @property
    def unsup_idx(self) -> Array:
        return np.concatenate([self.unlabeled_idx, self.est_idx])

    @property
    def n_unlabeled(self) -> int:
        return self.unlabeled_idx.shape[0]

    def attach_labels(self, labels: Array) -> None:
        self._labels = np.asarray(labels)

    def sup_labels(self) -> Array:
        if self._labels is None:
            raise LabelAccessError("no labels attached to this split")
        return self._labels[self.sup_idx]

    def est_labels(self, purpose: str) -> Array:
        if purpose not in EST_PURPOSES:
            raise LabelAccessError(
                f"estimation-set labels may not be read for purpose {purpose!r}")
        if self._labels is None:
            raise LabelAccessError("no labels attached to this split")
        self.audit_log.append(("est", purpose))
        return self._labels[self.est_idx]

    def unlabeled_truth(self, purpose: str) -> Array:
        if purpose not in UNLABELED_PURPOSES:
            raise LabelAccessError(
                f"unlabeled-pool ground truth may not be read for purpose {purpose!r}")
        if self._labels is None:
            raise LabelAccessError("no labels attached to this split")
        self.audit_log.append(("unlabeled", purpose))
        return self._labels[self.unlabeled_idx]


def split_ssmll(dataset: Dataset, rho: float, est_fraction: float,
                seed: int) -> SsmllSplits:
    """Partition the pool into D_sup, D_est and D_u.

    ceil(rho * N) samples are labelled; est_fraction of those (rounded) form
    the estimation set, the rest the supervised set.
    """
    if not 0.0 < rho < 1.0:
        raise ValueError("rho must lie in (0, 1)")
    if not 0.0 < est_fraction < 1.0:
        raise ValueError("est_fraction must lie in (0, 1)")
    n = dataset.n_samples
    n_labeled = int(np.ceil(rho * n))
    n_est = int(round(n_labeled * est_fraction))
    n_sup = n_labeled - n_est
    if n_est < 1 or n_sup < 1:
        raise ValueError(
            f"split of {n_labeled} labelled samples leaves an empty subset "
            f"(sup={n_sup}, est={n_est})")
    perm = np.random.default_rng(seed).permutation(n)
    splits = SsmllSplits(
        sup_idx=np.sort(perm[:n_sup]),
        est_idx=np.sort(perm[n_sup:n_labeled]),
        unlabeled_idx=np.sort(perm[n_labeled:]),
        rho=rho,
        est_fraction=est_fraction,
        seed=seed,
    )
    splits.attach_labels(dataset.labels)
    return splits


def augment(features: Array, strength: str, seed: int, *,
            weak_sigma: float = 0.05, strong_sigma: float = 0.2,
            dropout_rate: float = 0.2) -> Array:
    """Noise-based view generation.

    weak: additive gaussian noise. strong: larger additive noise plus
    independent coordinate dropout.
    """
    features = np.asarray(features, dtype=np.float64)
    rng = np.random.default_rng(seed)
    if strength == "weak":
        if weak_sigma == 0:
            return features.copy()
        return features + weak_sigma * rng.standard_normal(features.shape)
    if strength == "strong":
        out = features.copy()
        if strong_sigma > 0:
            out = out + strong_sigma * rng.standard_normal(features.shape)
        if dropout_rate > 0:
            out = out * (rng.uniform(size=features.shape) >= dropout_rate)
        return out
    raise ValueError(f"unknown augmentation strength {strength!r}")


# -- serialization -------------------------------------------------------------


def save_dataset(dataset: Dataset, features_path, labels_path) -> None:
    """Header line (N, d, C, seed) then CSV rows; companion CSV label matrix.

    Features are written with repr-round-trip precision so reloading is
    bit-exact.
    """
    cfg = dataset.config
    n, d = dataset.features.shape
    with open(features_path, "w") as fh:
        fh.write(f"{n},{d},{dataset.n_classes},{cfg.seed}\n")
        for row in dataset.features:
            fh.write(",".join(f"{x:.17g}" for x in row) + "\n")
    with open(labels_path, "w") as fh:
        for row in dataset.labels:
            fh.write(",".join(str(int(x)) for x in row) + "\n")


def load_dataset(features_path, labels_path) -> Dataset:
    with open(features_path) as fh:
        header = fh.readline().strip().split(",")
        n, d, c, seed = (int(x) for x in header)
        features = np.loadtxt(fh, delimiter=",", dtype=np.float64, ndmin=2)
    labels = np.loadtxt(labels_path, delimiter=",", dtype=np.int8, ndmin=2)
    if features.shape != (n, d) or labels.shape != (n, c):
        raise ValueError("dataset files disagree with their header")
    cfg = GenConfig(n_samples=n, n_features=d, n_classes=c, seed=seed)
    return Dataset(features=features, labels=labels, config=cfg)


def save_splits(splits: SsmllSplits, path) -> None:
    payload = {
        "sup": splits.sup_idx.tolist(),
        "est": splits.est_idx.tolist(),
        "unlabeled": splits.unlabeled_idx.tolist(),
        "unsup": splits.unsup_idx.tolist(),
        "rho": splits.rho,
        "est_fraction": splits.est_fraction,
        "seed": splits.seed,
    }
    with open(path, "w") as fh:
        json.dump(payload, fh)
        fh.write("\n")


def load_splits(path, dataset: Dataset | None = None) -> SsmllSplits:
    with open(path) as fh:
        payload = json.load(fh)
    splits = SsmllSplits(
        sup_idx=np.asarray(payload["sup"], dtype=np.intp),
        est_idx=np.asarray(payload["est"], dtype=np.intp),
        unlabeled_idx=np.asarray(payload["unlabeled"], dtype=np.intp),
        rho=float(payload["rho"]),
        est_fraction=float(payload["est_fraction"]),
        seed=int(payload["seed"]),
    )
    recorded = np.asarray(payload["unsup"], dtype=np.intp)
    if not np.array_equal(recorded, splits.unsup_idx):
        raise ValueError("splits file breaks the unsup = unlabeled + est identity")
    if dataset is not None:
        splits.attach_labels(dataset.labels)
    return splits
