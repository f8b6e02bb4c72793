"""Named parameter sets, AdamW with decoupled decay, EMA shadows, and the
finite-difference gradient checker used to audit every loss in the package."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterator

import numpy as np

from .autodiff import Array, Tensor, as_matrix

BACKBONE = "backbone"
HEAD = "head"


@dataclass
class Parameter:
    name: str
    values: Array
    group: str = BACKBONE
    trainable: bool = True

    def __post_init__(self):
        self.values = as_matrix(self.values)
        if self.group not in (BACKBONE, HEAD):
            raise ValueError(f"unknown parameter group {self.group!r}")


class ParamSet:
    """Ordered collection of named parameters."""

    def __init__(self, parameters: list[Parameter] | None = None):
        self._params: dict[str, Parameter] = {}
        for p in parameters or []:
            self.add(p)

    def add(self, param: Parameter) -> None:
        if param.name in self._params:
            raise ValueError(f"duplicate parameter name {param.name!r}")
        self._params[param.name] = param

    def __getitem__(self, name: str) -> Parameter:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[Parameter]:
        return iter(self._params.values())

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def leaf_tensors(self, values: dict[str, Array] | None = None,
                     trainable: bool | None = None) -> dict[str, Tensor]:
        """Fresh graph leaves for a forward pass.

        `values` substitutes alternative arrays (e.g. EMA shadows); `trainable`
        forces requires_grad, otherwise each parameter's own flag is used.
        """
        leaves = {}
        for p in self:
            v = p.values if values is None else values[p.name]
            rg = p.trainable if trainable is None else trainable
            leaves[p.name] = Tensor(v, requires_grad=rg)
        return leaves

    def clone_values(self) -> dict[str, Array]:
        return {p.name: p.values.copy() for p in self}

    def set_trainable(self, flags: dict[str, bool]) -> None:
        if set(flags) != set(self._params):
            raise ValueError("trainable flags must cover every parameter exactly")
        for name, flag in flags.items():
            self._params[name].trainable = bool(flag)


@dataclass
class AdamWConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-4


@dataclass
class OptimState:
    """First/second moment accumulators plus a shared step counter."""

    config: AdamWConfig
    m: dict[str, Array] = field(default_factory=dict)
    v: dict[str, Array] = field(default_factory=dict)
    step: int = 0

    @classmethod
    def for_params(cls, params: ParamSet, config: AdamWConfig | None = None) -> "OptimState":
        config = config or AdamWConfig()
        state = cls(config=config)
        for p in params:
            state.m[p.name] = np.zeros_like(p.values)
            state.v[p.name] = np.zeros_like(p.values)
        return state


def adamw_step(params: ParamSet, grads: dict[str, Array], state: OptimState) -> OptimState:
    """Bias-corrected adaptive update with decoupled weight decay.

    Only trainable parameters with a gradient entry move; decay is applied as
    theta <- theta * (1 - lr * lambda) before the adaptive step.
    """
    cfg = state.config
    state.step += 1
    t = state.step
    bc1 = 1.0 - cfg.beta1 ** t
    bc2 = 1.0 - cfg.beta2 ** t
    for name, grad in grads.items():
        param = params[name]
        if not param.trainable:
            continue
        if grad.shape != param.values.shape:
            raise ValueError(
                f"gradient shape {grad.shape} does not match parameter "
                f"{name!r} shape {param.values.shape}")
        m = state.m[name]
        v = state.v[name]
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * grad
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * grad * grad
        update = (m / bc1) / (np.sqrt(v / bc2) + cfg.eps)
        param.values *= 1.0 - cfg.lr * cfg.weight_decay
        param.values -= cfg.lr * update
        if not np.isfinite(param.values).all():
            raise FloatingPointError(f"non-finite values in parameter {name!r}")
    return state


class EmaState:
    """Exponential moving average shadow of a ParamSet."""

    def __init__(self, shadow: dict[str, Array], decay: float):
        if not 0.0 <= decay < 1.0:
            raise ValueError(f"EMA decay must be in [0, 1), got {decay}")
        self.shadow = shadow
        self.decay = decay

    @classmethod
    def from_params(cls, params: ParamSet, decay: float) -> "EmaState":
        return cls(params.clone_values(), decay)

    def update(self, params: ParamSet) -> None:
        d = self.decay
        for p in params:
            shadow = self.shadow[p.name]
            if shadow.shape != p.values.shape:
                raise ValueError(f"EMA shadow shape mismatch for {p.name!r}")
            shadow *= d
            shadow += (1.0 - d) * p.values

    def sync(self, params: ParamSet, names: list[str] | None = None) -> None:
        """Copy current parameter values into the shadow (all or a subset)."""
        for name in names if names is not None else [p.name for p in params]:
            self.shadow[name] = params[name].values.copy()


def ema_update(ema: EmaState, params: ParamSet) -> EmaState:
    ema.update(params)
    return ema


def grad_check(loss_fn: Callable[[dict[str, Tensor]], Tensor],
               params: ParamSet, eps: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    `loss_fn` maps a dict of leaf tensors (one per parameter) to a scalar
    tensor. Denominators are floored at 1e-8 so zero-gradient entries do not
    blow up the ratio. Raises if any probe produces a non-finite loss.
    """
    leaves = params.leaf_tensors(trainable=True)
    loss = loss_fn(leaves)
    loss.backward()
    if not np.isfinite(loss.item()):
        raise FloatingPointError("non-finite loss at the evaluation point")
    analytic = {name: (leaf.grad if leaf.grad is not None else np.zeros_like(leaf.values))
                for name, leaf in leaves.items()}

    def probe(values: dict[str, Array]) -> float:
        out = loss_fn({name: Tensor(v, requires_grad=False) for name, v in values.items()})
        value = out.item()
        if not np.isfinite(value):
            raise FloatingPointError("non-finite loss at a finite-difference probe")
        return value

    base = params.clone_values()
    worst = 0.0
    for p in params:
        flat = base[p.name].reshape(-1)
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + eps
            f_plus = probe(base)
            flat[i] = original - eps
            f_minus = probe(base)
            flat[i] = original
            fd = (f_plus - f_minus) / (2.0 * eps)
            a = analytic[p.name].reshape(-1)[i]
            denom = max(abs(a), abs(fd), 1e-8)
            worst = max(worst, abs(a - fd) / denom)
    return worst
