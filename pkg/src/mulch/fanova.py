"""Individual hyperparameter importance by functional ANOVA over a random forest.

Each regression tree is piecewise constant, so its ANOVA decomposition under
the uniform measure can be computed exactly: split thresholds cut every
dimension into elementary cells, each leaf is a product of cell masks, and
marginals are weighted sums over leaves.
"""

from __future__ import annotations

import csv
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from mulch.space import CATEGORICAL, Configuration, SearchSpace


@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 64
    max_depth: int = 64
    min_leaf: int = 3
    bootstrap_fraction: float = 0.8

    def __post_init__(self) -> None:
        if self.n_trees < 1 or self.max_depth < 1 or self.min_leaf < 1:
            raise ValueError("forest sizes must be >= 1")
        if not 0 < self.bootstrap_fraction <= 1:
            raise ValueError("bootstrap fraction must be in (0, 1]")


@dataclass(frozen=True)
class EvaluationRecord:
    config: Configuration
    metric: float

    def __post_init__(self) -> None:
        if not np.isfinite(self.metric):
            raise ValueError("metric must be finite")


@dataclass(frozen=True)
class ImportanceReport:
    names: tuple[str, ...]
    scores: tuple[float, ...]
    residual: float
    degenerate: bool = False
    n_trees_used: int = 0

    def score(self, name: str) -> float:
        return self.scores[self.names.index(name)]

    def as_dict(self) -> dict[str, float]:
        return dict(zip(self.names, self.scores))

    def to_dict(self) -> dict:
        return {"scores": self.as_dict(), "residual": self.residual, "degenerate": self.degenerate,
                "ranking": rank_parameters(self), "n_trees_used": self.n_trees_used}


# -- trees --------------------------------------------------------------------


@dataclass
class _Leaf:
    value: float
    lo: np.ndarray  # continuous interval per dim
    hi: np.ndarray
    cats: list  # per dim: allowed category set (None for continuous)


@dataclass
class _Tree:
    leaves: list[_Leaf] = field(default_factory=list)
    cuts: list[set] = field(default_factory=list)


def _best_split(X: np.ndarray, y: np.ndarray, n_cats: Sequence[int], min_leaf: int):
    """Best variance-reduction split of one node.

    Targets are centered first (the gain is shift-free, and centering avoids
    cancellation). Each dimension's best gain is recomputed from its mask in
    row order, so the same partition scores identically whichever dimension
    produces it; exact ties go to the column whose values sort first, which
    keeps the forest equivariant to reordering the dimensions.
    """
    n = len(y)
    y = y - y.mean()
    total = y.sum()
    base = total * total / n

    def mask_gain(mask: np.ndarray) -> float:
        if not mask[0]:
            mask = ~mask  # orient so a partition and its mirror score the same
        nl = int(mask.sum())
        sl = y[mask].sum()
        return float(sl * sl / nl + (total - sl) ** 2 / (n - nl) - base)

    best = (0.0, -1, None)
    best_key = None
    for j in range(X.shape[1]):
        x = X[:, j]
        cand = None
        if n_cats[j]:
            for c in np.unique(x):
                mask = x == c
                nl = int(mask.sum())
                if nl < min_leaf or n - nl < min_leaf:
                    continue
                gain = mask_gain(mask)
                if cand is None or gain > cand[0]:
                    cand = (gain, ("cat", c))
        else:
            order = np.argsort(x, kind="stable")
            xs, ys = x[order], y[order]
            csum = np.cumsum(ys)[:-1]
            nl = np.arange(1, n)
            valid = (xs[1:] > xs[:-1]) & (nl >= min_leaf) & (n - nl >= min_leaf)
            if valid.any():
                gain = csum**2 / nl + (total - csum) ** 2 / (n - nl) - base
                i = int(np.argmax(np.where(valid, gain, -np.inf)))
                thr = 0.5 * (xs[i] + xs[i + 1])
                cand = (mask_gain(x < thr), ("num", thr))
        if cand is None or not cand[0] > 0:
            continue
        if cand[0] > best[0]:
            best, best_key = (cand[0], j, cand[1]), None
        elif cand[0] == best[0]:
            best_key = best_key or _column_key(X[:, best[1]])
            key = _column_key(x)
            if key < best_key:
                best, best_key = (cand[0], j, cand[1]), key
    return best


def _column_key(col: np.ndarray) -> tuple:
    return tuple(col.tolist())


def _grow(X: np.ndarray, y: np.ndarray, n_cats: Sequence[int], cfg: ForestConfig) -> _Tree:
    d = X.shape[1]
    tree = _Tree(cuts=[set() for _ in range(d)])
    root_cats = [set(range(k)) if k else None for k in n_cats]
    stack = [(np.arange(len(y)), np.zeros(d), np.ones(d), root_cats, 0)]
    while stack:
        idx, lo, hi, cats, depth = stack.pop()
        yy = y[idx]
        sse = float(((yy - yy.mean()) ** 2).sum())
        split = None
        if depth < cfg.max_depth and len(idx) >= 2 * cfg.min_leaf and sse > 0:
            gain, j, rule = _best_split(X[idx], yy, n_cats, cfg.min_leaf)
            if j >= 0 and gain > 1e-12 * sse:
                split = (j, rule)
        if split is None:
            tree.leaves.append(_Leaf(float(yy.mean()), lo, hi, cats))
            continue
        j, (kind, v) = split
        if kind == "cat":
            mask = X[idx, j] == v
            lcats, rcats = list(cats), list(cats)
            lcats[j] = {int(v)}
            rcats[j] = cats[j] - {int(v)}
            stack.append((idx[~mask], lo, hi, rcats, depth + 1))
            stack.append((idx[mask], lo, hi, lcats, depth + 1))
        else:
            mask = X[idx, j] < v
            tree.cuts[j].add(float(v))
            lhi, rlo = hi.copy(), lo.copy()
            lhi[j] = v
            rlo[j] = v
            stack.append((idx[~mask], rlo, hi, cats, depth + 1))
            stack.append((idx[mask], lo, lhi, cats, depth + 1))
    return tree


def tree_variances(tree: _Tree, n_cats: Sequence[int]) -> tuple[float, np.ndarray]:
    """Exact total variance and per-dimension main-effect variances of one tree."""
    d = len(n_cats)
    values = np.array([leaf.value for leaf in tree.leaves])
    masks, widths = [], []
    for j in range(d):
        if n_cats[j]:
            w = np.full(n_cats[j], 1.0 / n_cats[j])
            m = np.array([[c in leaf.cats[j] for c in range(n_cats[j])] for leaf in tree.leaves], dtype=float)
        else:
            edges = np.array(sorted({0.0, 1.0} | tree.cuts[j]))
            w = np.diff(edges)
            mids = 0.5 * (edges[:-1] + edges[1:])
            lo = np.array([leaf.lo[j] for leaf in tree.leaves])[:, None]
            hi = np.array([leaf.hi[j] for leaf in tree.leaves])[:, None]
            m = ((mids[None, :] > lo) & (mids[None, :] < hi)).astype(float)
        masks.append(m)
        widths.append(w)
    vols = np.column_stack([m @ w for m, w in zip(masks, widths)])  # leaf extent per dim
    vol = vols.prod(axis=1)
    mean = float(values @ vol)
    values = values - mean  # centered, so large offsets do not cancel
    mean = float(values @ vol)
    total = float((values**2) @ vol - mean**2)
    main = np.zeros(d)
    for j in range(d):
        others = np.prod(np.delete(vols, j, axis=1), axis=1) if d > 1 else np.ones(len(values))
        marginal = (values * others) @ masks[j]  # mean over the other dims, per cell of dim j
        main[j] = float(widths[j] @ (marginal - mean) ** 2)
    return max(total, 0.0), main


# -- public API ---------------------------------------------------------------


def _design(space: SearchSpace, configs: Sequence[Mapping[str, Any]]) -> tuple[np.ndarray, list[int]]:
    n_cats = [p.n_choices if p.kind == CATEGORICAL else 0 for p in space.parameters]
    X = np.empty((len(configs), space.d))
    for i, c in enumerate(configs):
        for j, p in enumerate(space.parameters):
            X[i, j] = p.to_transformed(c[p.name]) if n_cats[j] else p.encode(c[p.name])
    return X, n_cats


def importances_from_arrays(X: np.ndarray, y: np.ndarray, names: Sequence[str], n_cats: Sequence[int],
                            forest: ForestConfig | None = None, seed: int = 0) -> ImportanceReport:
    forest = forest or ForestConfig()
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(y) < 32:
        raise ValueError(f"need at least 32 records, got {len(y)}")
    if not np.all(np.isfinite(y)):
        raise ValueError("metrics must be finite")
    d = X.shape[1]
    if np.ptp(y) == 0:
        return ImportanceReport(tuple(names), (0.0,) * d, 0.0, degenerate=True)
    n_boot = max(2 * forest.min_leaf, int(round(forest.bootstrap_fraction * len(y))))
    streams = np.random.SeedSequence(seed).spawn(forest.n_trees)
    ratios = []
    for ss in streams:
        idx = np.random.default_rng(ss).integers(0, len(y), size=n_boot)
        tree = _grow(X[idx], y[idx], n_cats, forest)
        total, main = tree_variances(tree, n_cats)
        if total > 0:
            ratios.append(np.clip(main / total, 0.0, 1.0))
    if not ratios:
        return ImportanceReport(tuple(names), (0.0,) * d, 0.0, degenerate=True)
    scores = np.mean(ratios, axis=0)
    return ImportanceReport(tuple(names), tuple(float(s) for s in scores),
                            float(1.0 - scores.sum()), False, len(ratios))


def compute_importances(records: Sequence[EvaluationRecord], space: SearchSpace,
                        forest: ForestConfig | None = None, seed: int = 0) -> ImportanceReport:
    X, n_cats = _design(space, [r.config for r in records])
    y = np.array([r.metric for r in records])
    return importances_from_arrays(X, y, space.names, n_cats, forest, seed)


def rank_parameters(report: ImportanceReport) -> list[str]:
    order = sorted(range(len(report.names)), key=lambda j: (-report.scores[j], j))
    return [report.names[j] for j in order]


def read_evals(path: str | Path, space: SearchSpace) -> list[EvaluationRecord]:
    """Read ``evals.csv``: one column per parameter plus ``metric``."""
    out = []
    with Path(path).open(newline="") as fh:
        for row in csv.DictReader(fh):
            values = {}
            for p in space.parameters:
                raw = row[p.name]
                if p.kind == CATEGORICAL:
                    values[p.name] = raw
                elif p.kind == "integer":
                    values[p.name] = int(float(raw))
                else:
                    values[p.name] = float(raw)
            out.append(EvaluationRecord(space.make(values), float(row["metric"])))
    return out


def write_evals(path: str | Path, space: SearchSpace, records: Sequence[EvaluationRecord]) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(space.names + ["metric"])
        for r in records:
            w.writerow([r.config[n] if isinstance(r.config[n], str) else repr(r.config[n]) for n in space.names]
                       + [repr(float(r.metric))])
