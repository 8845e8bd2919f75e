"""Miniature gradient-boosted-tree binary classifier used as the tuning objective."""

from mulch.gbt.data import (
    Dataset,
    load_csv,
    make_dataset,
    make_synthetic,
    save_csv,
    subsample_fidelity,
)
from mulch.gbt.train import (
    EarlyStopConfig,
    EvalResult,
    GbtHyperparams,
    TrainResult,
    TreeEnsemble,
    objective,
    train,
)

__all__ = [
    "Dataset",
    "EarlyStopConfig",
    "EvalResult",
    "GbtHyperparams",
    "TrainResult",
    "TreeEnsemble",
    "load_csv",
    "make_dataset",
    "make_synthetic",
    "objective",
    "save_csv",
    "subsample_fidelity",
    "train",
]
