"""Encoder with per-class scoring and embedding heads.

The encoder is a small relu MLP. Class scores are sigmoid logits from a
linear head; the class-wise embedding for (sample i, class c) is the row
L2-normalised projection of the hidden state gated by a learned class
vector: z_ic = normalize(W_p (h_i * e_c)).
"""

from __future__ import annotations

import io
import json
from dataclasses import asdict, dataclass

import numpy as np

from .autodiff import Array, Tensor
from .optim import (BACKBONE, HEAD, AdamWConfig, EmaState, OptimState,
                    Parameter, ParamSet)


@dataclass
class ModelConfig:
    input_dim: int
    num_classes: int
    hidden_dim: int = 64
    hidden_layers: int = 2
    embedding_dim: int = 16

    def __post_init__(self):
        for name in ("input_dim", "num_classes", "hidden_dim", "hidden_layers",
                     "embedding_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> Array:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


def _init_params(config: ModelConfig, rng: np.random.Generator) -> ParamSet:
    params = ParamSet()
    in_dim = config.input_dim
    for layer in range(config.hidden_layers):
        params.add(Parameter(f"enc{layer}_w", _glorot(rng, in_dim, config.hidden_dim), BACKBONE))
        params.add(Parameter(f"enc{layer}_b", np.zeros((1, config.hidden_dim)), BACKBONE))
        in_dim = config.hidden_dim
    params.add(Parameter("class_emb",
                         _glorot(rng, config.num_classes, config.hidden_dim), BACKBONE))
    params.add(Parameter("proj_w",
                         _glorot(rng, config.hidden_dim, config.embedding_dim), BACKBONE))
    params.add(Parameter("head_w", _glorot(rng, config.hidden_dim, config.num_classes), HEAD))
    params.add(Parameter("head_b", np.zeros((1, config.num_classes)), HEAD))
    return params


class ModelGraph:
    """One forward graph over shared parameter leaves.

    Build the leaves once, then run any number of inputs through them so a
    single backward pass accumulates gradients from every term of the loss.
    """

    def __init__(self, model: "ModelState", use_ema: bool = False):
        self.config = model.config
        values = model.ema.shadow if use_ema else None
        trainable = False if use_ema else None
        self.leaves = model.params.leaf_tensors(values=values, trainable=trainable)

    def hidden(self, features: Array) -> Tensor:
        features = np.asarray(features, dtype=np.float64)
        if features.ndim != 2 or features.shape[1] != self.config.input_dim:
            raise ValueError(
                f"expected features of shape (n, {self.config.input_dim}), "
                f"got {features.shape}")
        h = Tensor.constant(features)
        for layer in range(self.config.hidden_layers):
            h = (h @ self.leaves[f"enc{layer}_w"] + self.leaves[f"enc{layer}_b"]).relu()
        return h

    def scores_from_hidden(self, hidden: Tensor) -> Tensor:
        return (hidden @ self.leaves["head_w"] + self.leaves["head_b"]).sigmoid()

    def scores(self, features: Array) -> Tensor:
        return self.scores_from_hidden(self.hidden(features))

    def class_embedding(self, hidden: Tensor, class_index: int) -> Tensor:
        gate = self.leaves["class_emb"].take_rows([class_index])
        return ((hidden * gate) @ self.leaves["proj_w"]).row_l2_normalize()

    def class_embeddings(self, hidden: Tensor) -> list[Tensor]:
        return [self.class_embedding(hidden, c) for c in range(self.config.num_classes)]

    def gradients(self) -> dict[str, Array]:
        """Gradients accumulated on the leaves after a backward() call."""
        return {name: leaf.grad for name, leaf in self.leaves.items()
                if leaf.requires_grad and leaf.grad is not None}


class ModelState:
    """Parameters, optimizer accumulators, and the EMA shadow."""

    def __init__(self, config: ModelConfig, params: ParamSet,
                 opt_state: OptimState, ema: EmaState):
        self.config = config
        self.params = params
        self.opt_state = opt_state
        self.ema = ema

    @classmethod
    def build(cls, config: ModelConfig, optim_config: AdamWConfig | None = None,
              ema_decay: float = 0.9997, seed: int = 0) -> "ModelState":
        rng = np.random.default_rng(seed)
        params = _init_params(config, rng)
        opt_state = OptimState.for_params(params, optim_config)
        ema = EmaState.from_params(params, ema_decay)
        return cls(config, params, opt_state, ema)

    def graph(self, use_ema: bool = False) -> ModelGraph:
        return ModelGraph(self, use_ema=use_ema)

    def trainable_mask(self, head_only: bool) -> dict[str, bool]:
        return {p.name: (p.group == HEAD) if head_only else True for p in self.params}

    def set_trainable(self, head_only: bool) -> None:
        self.params.set_trainable(self.trainable_mask(head_only))

    def head_names(self) -> list[str]:
        return [p.name for p in self.params if p.group == HEAD]

    def backbone_names(self) -> list[str]:
        return [p.name for p in self.params if p.group == BACKBONE]

    # -- inference -------------------------------------------------------------

    def predict_scores(self, features: Array, use_ema: bool = True) -> Array:
        return self.graph(use_ema=use_ema).scores(features).values

    def forward(self, features: Array, use_ema: bool = False) -> tuple[Array, Array]:
        """Scores (n, C) and unit class embeddings (n, C, embedding_dim)."""
        g = self.graph(use_ema=use_ema)
        h = g.hidden(features)
        scores = g.scores_from_hidden(h).values
        embeddings = np.stack([z.values for z in g.class_embeddings(h)], axis=1)
        return scores, embeddings


CHECKPOINT_VERSION = 1


def save_checkpoint(model: ModelState, path) -> None:
    """Serialize config, parameters, and EMA shadow (bit-exact round trip).

    Optimizer accumulators are intentionally not persisted.
    """
    payload: dict[str, Array] = {
        "__version__": np.array([CHECKPOINT_VERSION]),
        "__ema_decay__": np.array([model.ema.decay]),
    }
    meta = {
        "config": asdict(model.config),
        "names": model.params.names(),
        "groups": {p.name: p.group for p in model.params},
        "optim": asdict(model.opt_state.config),
    }
    payload["__meta__"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)
    for p in model.params:
        payload[f"param::{p.name}"] = p.values
        payload[f"ema::{p.name}"] = model.ema.shadow[p.name]
    buffer = io.BytesIO()
    np.savez(buffer, **payload)
    with open(path, "wb") as fh:
        fh.write(buffer.getvalue())


def load_checkpoint(path) -> ModelState:
    with np.load(path) as data:
        version = int(data["__version__"][0])
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        meta = json.loads(bytes(data["__meta__"]).decode())
        config = ModelConfig(**meta["config"])
        params = ParamSet()
        shadow = {}
        for name in meta["names"]:
            params.add(Parameter(name, data[f"param::{name}"].copy(),
                                 group=meta["groups"][name]))
            shadow[name] = data[f"ema::{name}"].copy()
        decay = float(data["__ema_decay__"][0])
    opt_state = OptimState.for_params(params, AdamWConfig(**meta["optim"]))
    return ModelState(config, params, opt_state, EmaState(shadow, decay))
