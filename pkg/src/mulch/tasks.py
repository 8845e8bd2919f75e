"""Named bundled classification tasks and task-spec resolution.

Every bundled task is generated deterministically from a recipe below and
shipped as CSV under ``mulch/data/tasks``; ``scripts/make_tasks.py``
regenerates the files.
"""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np

from mulch.gbt.data import Dataset, load_csv, make_dataset, make_synthetic

TASK_DIR = Path(__file__).parent / "data" / "tasks"


def make_moons(m: int, noise: float, seed: int, extra: int = 0, positive: float = 0.5,
               name: str = "moons") -> Dataset:
    """Two interleaving half circles with Gaussian jitter, plus optional nuisance features."""
    rng = np.random.default_rng(seed)
    n0 = m - int(round(positive * m))
    n1 = m - n0
    t0 = rng.uniform(0, math.pi, n0)
    t1 = rng.uniform(0, math.pi, n1)
    a = np.column_stack([np.cos(t0), np.sin(t0)])
    b = np.column_stack([1 - np.cos(t1), 0.5 - np.sin(t1)])
    X = np.vstack([a, b]) + noise * rng.normal(size=(m, 2))
    y = np.r_[np.zeros(n0), np.ones(n1)]
    if extra:
        X = np.hstack([X, rng.normal(size=(m, extra))])
    perm = rng.permutation(m)
    return make_dataset(X[perm], y[perm], name=name, seed=seed)


# name -> (generator, kwargs)
RECIPES: dict[str, tuple[str, dict]] = {
    "moons": ("moons", {"m": 1000, "noise": 0.3, "seed": 11, "extra": 2, "positive": 0.42}),
    "clusters-a": ("clusters", {"m": 1000, "p": 6, "noise": 0.05, "seed": 21, "spread": 0.3, "positive": 0.44}),
    "clusters-b": ("clusters", {"m": 1000, "p": 8, "noise": 0.05, "seed": 22, "spread": 0.35, "positive": 0.58,
                                "informative": 5}),
    "large-a": ("clusters", {"m": 2400, "p": 8, "noise": 0.05, "seed": 31, "spread": 0.35, "positive": 0.43}),
    "large-b": ("clusters", {"m": 2400, "p": 10, "noise": 0.08, "seed": 32, "spread": 0.3, "positive": 0.57,
                             "informative": 6}),
    "large-c": ("moons", {"m": 2400, "noise": 0.35, "seed": 33, "extra": 4, "positive": 0.42}),
}
# Tasks whose sweeps train the shipped priors; disjoint from the evaluation tasks above.
META_RECIPES: dict[str, tuple[str, dict]] = {
    f"meta-{i}": ("clusters", {"m": 800, "p": 4 + i % 5, "noise": 0.04 + 0.01 * (i % 4),
                               "seed": 100 + i, "spread": 0.25 + 0.05 * (i % 3),
                               "positive": 0.42 + 0.02 * (i % 3)})
    for i in range(8)
}


def build(name: str) -> Dataset:
    kind, kw = {**RECIPES, **META_RECIPES}[name]
    if kind == "moons":
        return make_moons(name=name, **kw)
    return make_synthetic({**kw, "name": name})


def task_names(meta: bool = False) -> list[str]:
    return list(META_RECIPES if meta else RECIPES)


def resolve_task(spec: str, seed: int = 0) -> Dataset:
    """``synthetic:<name>`` for a bundled task, otherwise a CSV path split with ``seed``.

    Bundled tasks always use their recipe's split seed.
    """
    if spec.startswith("synthetic:"):
        name = spec.split(":", 1)[1]
        if name not in RECIPES and name not in META_RECIPES:
            raise ValueError(f"unknown bundled task {name!r}; known: {sorted(RECIPES)}")
        path = TASK_DIR / f"{name}.csv"
        if path.exists():
            data = load_csv(path, seed={**RECIPES, **META_RECIPES}[name][1]["seed"])
            return Dataset(data.features, data.labels, data.train_idx, data.val_idx, name)
        return build(name)
    path = Path(spec)
    if not path.exists():
        raise FileNotFoundError(f"task file {spec!r} not found")
    return load_csv(path, seed=seed)
