"""Weighting-policy comparison: the same pipeline run under each weight
source, differing in nothing else."""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np

from .data import Dataset, SsmllSplits
from .model import ModelConfig
from .training import (POLICIES, PipelineResult, TrainConfig, run_pipeline)

logger = logging.getLogger(__name__)


@dataclass
class PolicyRun:
    policy: str
    seed: int
    test_map: float
    result: PipelineResult


@dataclass
class PolicyReport:
    runs: dict[str, list[PolicyRun]]
    seeds: list[int]

    def maps(self, policy: str) -> list[float]:
        return [run.test_map for run in self.runs[policy]]

    def mean_map(self, policy: str) -> float:
        return float(np.mean(self.maps(policy)))

    def summary(self) -> dict:
        out = {}
        for policy in self.runs:
            maps = self.maps(policy)
            out[policy] = {
                "map_per_seed": maps,
                "map_mean": float(np.mean(maps)),
                "map_std": float(np.std(maps)),
            }
        return {"seeds": self.seeds, "policies": out}

    def to_rows(self) -> list[dict]:
        rows = []
        for policy, runs in self.runs.items():
            for run in runs:
                rows.append({"policy": policy, "seed": run.seed,
                             "map": run.test_map})
        return rows


def compare_policies(dataset: Dataset, splits: SsmllSplits, test_set: Dataset,
                     model_cfg: ModelConfig, train_cfg: TrainConfig,
                     seeds: list[int],
                     policies: tuple[str, ...] = POLICIES,
                     collect_reliability: bool = False) -> PolicyReport:
    """Run every weighting policy on identical data with identical seeds.

    Each (policy, seed) run shares the dataset and split; the seed drives
    model initialisation and training randomness, so two policies at the same
    seed start from bitwise-identical models.
    """
    runs: dict[str, list[PolicyRun]] = {p: [] for p in policies}
    for policy in policies:
        for seed in seeds:
            cfg = replace(train_cfg, seed=seed)
            result = run_pipeline(dataset, splits, model_cfg, cfg, policy=policy,
                                  test_set=test_set,
                                  collect_reliability=collect_reliability)
            logger.info("policy=%s seed=%d mAP=%.4f", policy, seed, result.test_map)
            runs[policy].append(PolicyRun(policy=policy, seed=seed,
                                          test_map=result.test_map, result=result))
    return PolicyReport(runs=runs, seeds=list(seeds))
