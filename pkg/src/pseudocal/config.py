"""JSON run configuration: strict parsing, defaults materialised into a
snapshot so every hyperparameter of a run is on disk."""

from __future__ import annotations

import json
from dataclasses import dataclass, fields

from .data import GenConfig
from .losses import AslConfig
from .model import ModelConfig
from .training import POLICIES, TrainConfig


class ConfigError(ValueError):
    pass


_REQUIRED = object()


def _section(raw: dict, name: str, spec: dict) -> dict:
    """Validate one config section against {key: default} (defaults may be
    _REQUIRED); rejects unknown keys."""
    section = raw.get(name, {})
    if not isinstance(section, dict):
        raise ConfigError(f"section {name!r} must be an object")
    unknown = set(section) - set(spec)
    if unknown:
        raise ConfigError(f"unknown keys in section {name!r}: {sorted(unknown)}")
    out = {}
    for key, default in spec.items():
        if key in section:
            out[key] = section[key]
        elif default is _REQUIRED:
            raise ConfigError(f"missing required key {name}.{key}")
        else:
            out[key] = default
    return out


@dataclass
class RunConfig:
    data: GenConfig
    rho: float
    est_fraction: float
    split_seed: int
    model: ModelConfig
    train: TrainConfig
    n_test: int
    policy: str


def parse_run_config(raw: dict) -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config root must be an object")
    known_sections = {"data", "split", "model", "train", "eval", "policy"}
    unknown = set(raw) - known_sections
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")

    data_kw = _section(raw, "data", {
        "n_samples": 20_000, "n_features": 64, "n_classes": 10,
        "latent_dim": 16, "bias_low": GenConfig.bias_low,
        "bias_high": GenConfig.bias_high, "noise_sigma": GenConfig.noise_sigma,
        "seed": _REQUIRED,
    })
    split_kw = _section(raw, "split", {
        "rho": 0.05, "est_fraction": 0.2, "seed": _REQUIRED,
    })
    model_kw = _section(raw, "model", {
        "hidden_dim": 64, "hidden_layers": 2, "embedding_dim": 16,
    })
    train_defaults = {f.name: _REQUIRED if f.name == "seed" else getattr(TrainConfig(), f.name)
                      for f in fields(TrainConfig) if f.name != "asl"}
    train_kw = _section(raw, "train", {**train_defaults, "asl": None})
    asl_raw = train_kw.pop("asl") or {}
    unknown_asl = set(asl_raw) - {"gamma_pos", "gamma_neg", "margin"}
    if unknown_asl:
        raise ConfigError(f"unknown keys in train.asl: {sorted(unknown_asl)}")
    eval_kw = _section(raw, "eval", {"n_test": 4_000})
    policy = raw.get("policy", "estimated")
    if policy not in POLICIES:
        raise ConfigError(f"policy must be one of {POLICIES}, got {policy!r}")

    try:
        data = GenConfig(**data_kw)
        model = ModelConfig(input_dim=data.n_features, num_classes=data.n_classes,
                            **model_kw)
        train = TrainConfig(asl=AslConfig(**asl_raw), **train_kw)
        if not 0.0 < split_kw["rho"] < 1.0:
            raise ValueError("split.rho must lie in (0, 1)")
        if not 0.0 < split_kw["est_fraction"] < 1.0:
            raise ValueError("split.est_fraction must lie in (0, 1)")
        if eval_kw["n_test"] < 1:
            raise ValueError("eval.n_test must be >= 1")
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc

    return RunConfig(data=data, rho=float(split_kw["rho"]),
                     est_fraction=float(split_kw["est_fraction"]),
                     split_seed=int(split_kw["seed"]), model=model, train=train,
                     n_test=int(eval_kw["n_test"]), policy=policy)


def load_run_config(path) -> RunConfig:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file is not valid JSON: {exc}") from exc
    return parse_run_config(raw)


def resolved_dict(cfg: RunConfig) -> dict:
    """Every setting of the run, defaults included, in config-file schema."""
    train = {f.name: getattr(cfg.train, f.name)
             for f in fields(TrainConfig) if f.name != "asl"}
    train["asl"] = {
        "gamma_pos": cfg.train.asl.gamma_pos,
        "gamma_neg": cfg.train.asl.gamma_neg,
        "margin": cfg.train.asl.margin,
    }
    return {
        "data": {f.name: getattr(cfg.data, f.name) for f in fields(GenConfig)},
        "split": {"rho": cfg.rho, "est_fraction": cfg.est_fraction,
                  "seed": cfg.split_seed},
        "model": {"hidden_dim": cfg.model.hidden_dim,
                  "hidden_layers": cfg.model.hidden_layers,
                  "embedding_dim": cfg.model.embedding_dim},
        "train": train,
        "eval": {"n_test": cfg.n_test},
        "policy": cfg.policy,
    }


def write_snapshot(cfg: RunConfig, path) -> None:
    with open(path, "w") as fh:
        json.dump(resolved_dict(cfg), fh, indent=2)
        fh.write("\n")
