"""XGBoost-style boosted-tree classifier used as the tunable objective."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from collections.abc import Mapping
from typing import Any, NamedTuple

import numpy as np

from mulch.gbt import _core
from mulch.gbt.data import Dataset, subsample_fidelity

log = logging.getLogger(__name__)

# Accepted for search-space compatibility, no effect on this trainer.
IGNORED_PARAMS = ("max_delta_step", "alpha", "tree_method", "max_bin", "grow_policy")
DEFAULT_PATIENCE = 10
# Nominal seconds per work unit for the deterministic clock.
SECONDS_PER_WORK_UNIT = 1e-8

_noticed: set[str] = set()


@dataclass(frozen=True)
class GbtHyperparams:
    eta: float = 0.3
    max_depth: int = 6
    num_boost_round: int = 100
    gamma: float = 0.0
    min_child_weight: float = 1.0
    lam: float = 1.0
    subsample: float = 1.0

    def __post_init__(self) -> None:
        if not 0 <= self.eta <= 10:
            raise ValueError(f"eta={self.eta} outside [0, 10]")
        if not 1 <= self.max_depth <= 32:
            raise ValueError(f"max_depth={self.max_depth} outside [1, 32]")
        if not 1 <= self.num_boost_round <= 500:
            raise ValueError(f"num_boost_round={self.num_boost_round} outside [1, 500]")
        if not 0 <= self.gamma <= 5:
            raise ValueError(f"gamma={self.gamma} outside [0, 5]")
        if not 0 <= self.min_child_weight <= 5:
            raise ValueError(f"min_child_weight={self.min_child_weight} outside [0, 5]")
        if not 0 <= self.lam <= 10:
            raise ValueError(f"lambda={self.lam} outside [0, 10]")
        if not 0.5 <= self.subsample <= 1:
            raise ValueError(f"subsample={self.subsample} outside [0.5, 1]")

    @classmethod
    def from_config(cls, config: Mapping[str, Any]) -> "GbtHyperparams":
        """Build from a search-space configuration; missing keys take defaults."""
        kw: dict[str, Any] = {}
        for key, value in config.items():
            if key == "lambda":
                kw["lam"] = float(value)
            elif key in ("max_depth", "num_boost_round"):
                kw[key] = int(value)
            elif key in ("eta", "gamma", "min_child_weight", "subsample"):
                kw[key] = float(value)
            elif key in IGNORED_PARAMS:
                if key not in _noticed:
                    _noticed.add(key)
                    log.info("hyperparameter %r is accepted but ignored by the built-in trainer", key)
            else:
                raise KeyError(f"unknown GBT hyperparameter {key!r}")
        return cls(**kw)


@dataclass(frozen=True)
class EarlyStopConfig:
    patience: int = DEFAULT_PATIENCE
    enabled: bool = False

    def __post_init__(self) -> None:
        if self.patience < 1:
            raise ValueError("patience must be >= 1")


@dataclass(frozen=True, eq=False)
class TreeEnsemble:
    base_margin: float
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    tree_start: np.ndarray

    @property
    def n_trees(self) -> int:
        return len(self.tree_start) - 1

    def predict_margin(self, X: np.ndarray, n_trees: int | None = None) -> np.ndarray:
        n = self.n_trees if n_trees is None else n_trees
        return _core.predict_margin(np.ascontiguousarray(X, dtype=np.float64), self.base_margin,
                                    self.feature, self.threshold, self.left, self.right,
                                    self.value, self.tree_start, n)

    def predict(self, X: np.ndarray) -> np.ndarray:
        return (self.predict_margin(X) > 0).astype(np.float64)


@dataclass(frozen=True, eq=False)
class TrainResult:
    model: TreeEnsemble
    curve: np.ndarray  # validation accuracy after each round
    train_loss: np.ndarray  # mean logistic loss on the training rows after each round
    rounds_used: int
    wall_time: float
    work: int = field(default=0)

    @property
    def accuracy(self) -> float:
        return float(self.curve[-1])


def logistic_grad_hess(margin: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    p = 1.0 / (1.0 + np.exp(-margin))
    return p - y, p * (1.0 - p)


def train(dataset: Dataset, hp: GbtHyperparams, early_stop: EarlyStopConfig | None = None,
          seed: int = 0) -> TrainResult:
    y = dataset.y_train
    if len(np.unique(y)) < 2:
        raise ValueError("training set has a single class")
    early_stop = early_stop or EarlyStopConfig()
    prior = float(np.clip(y.mean(), 1e-6, 1 - 1e-6))
    base = math.log(prior / (1 - prior))
    patience = early_stop.patience if early_stop.enabled else 0

    t0 = time.perf_counter()
    out = _core.boost(np.ascontiguousarray(dataset.X_train), np.ascontiguousarray(y),
                      np.ascontiguousarray(dataset.X_val), np.ascontiguousarray(dataset.y_val),
                      base, float(hp.eta), int(hp.max_depth), int(hp.num_boost_round),
                      float(hp.gamma), float(hp.min_child_weight), float(hp.lam),
                      float(hp.subsample), int(patience), int(seed) % (2**32))
    wall = time.perf_counter() - t0
    feature, threshold, left, right, value, tree_start, curve, loss, used, work = out
    model = TreeEnsemble(base, feature, threshold, left, right, value, tree_start)
    return TrainResult(model, curve, loss, int(used), wall, int(work))


class EvalResult(NamedTuple):
    accuracy: float
    wall_time: float
    rounds_used: int
    work: int

    @property
    def modeled_time(self) -> float:
        return self.work * SECONDS_PER_WORK_UNIT


def objective(task: Dataset, hp: GbtHyperparams | Mapping[str, Any], r: float = 1.0,
              early_stop: EarlyStopConfig | None = None, seed: int = 0) -> EvalResult:
    """Validation accuracy of a model trained on a fraction ``r`` of the training rows."""
    if not isinstance(hp, GbtHyperparams):
        hp = GbtHyperparams.from_config(hp)
    data = subsample_fidelity(task, r, seed)
    res = train(data, hp, early_stop, seed)
    return EvalResult(res.accuracy, res.wall_time, res.rounds_used, res.work)
