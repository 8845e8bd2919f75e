"""Binary classification datasets: CSV ingestion, synthetic tasks, fidelity subsets."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

VALIDATION_FRACTION = 0.3
# Datasets where one class exceeds this share are rejected as imbalanced.
MAX_CLASS_SHARE = 0.8


@dataclass(frozen=True, eq=False)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    train_idx: np.ndarray
    val_idx: np.ndarray
    name: str = "dataset"

    def __post_init__(self) -> None:
        if self.features.ndim != 2 or self.features.shape[0] != self.labels.shape[0]:
            raise ValueError("features must be m x p and aligned with labels")
        if not np.all(np.isfinite(self.features)):
            raise ValueError("features contain missing or non-finite values")
        for part, idx in (("train", self.train_idx), ("validation", self.val_idx)):
            if len(np.unique(self.labels[idx])) < 2:
                raise ValueError(f"{part} split must contain both classes")

    @property
    def m(self) -> int:
        return self.features.shape[0]

    @property
    def p(self) -> int:
        return self.features.shape[1]

    @property
    def X_train(self) -> np.ndarray:
        return self.features[self.train_idx]

    @property
    def y_train(self) -> np.ndarray:
        return self.labels[self.train_idx]

    @property
    def X_val(self) -> np.ndarray:
        return self.features[self.val_idx]

    @property
    def y_val(self) -> np.ndarray:
        return self.labels[self.val_idx]


def stratified_split(labels: np.ndarray, val_fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(seed)
    train, val = [], []
    for c in (0, 1):
        idx = np.flatnonzero(labels == c)
        idx = idx[rng.permutation(len(idx))]
        n_val = int(round(val_fraction * len(idx)))
        val.append(idx[:n_val])
        train.append(idx[n_val:])
    return np.sort(np.concatenate(train)), np.sort(np.concatenate(val))


def make_dataset(features, labels, name: str = "dataset", seed: int = 0,
                 val_fraction: float = VALIDATION_FRACTION) -> Dataset:
    features = np.ascontiguousarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if not np.isin(labels, (0.0, 1.0)).all():
        raise ValueError("labels must be binary 0/1")
    share = max(labels.mean(), 1 - labels.mean())
    if share > MAX_CLASS_SHARE:
        raise ValueError(f"class imbalance too large: majority share {share:.3f} > {MAX_CLASS_SHARE}")
    train_idx, val_idx = stratified_split(labels, val_fraction, seed)
    return Dataset(features, labels, train_idx, val_idx, name)


def _as_float(cell: str) -> float | None:
    try:
        return float(cell)
    except ValueError:
        return None


def load_csv(path: str | Path, label_column: str = "label", seed: int = 0,
             val_fraction: float = VALIDATION_FRACTION) -> Dataset:
    """Read a CSV with a header row into a Dataset.

    Columns where every cell is non-numeric are integer-encoded (sorted labels);
    a column mixing numbers with unparseable cells is an error.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2:
        raise ValueError(f"{path}: empty file")
    header, body = rows[0], rows[1:]
    if label_column not in header:
        raise ValueError(f"{path}: no label column {label_column!r}")
    for r, row in enumerate(body, start=2):
        if len(row) != len(header):
            raise ValueError(f"{path}:{r}: expected {len(header)} cells, got {len(row)}")
        if any(cell.strip() == "" for cell in row):
            raise ValueError(f"{path}:{r}: missing value")
    columns = list(zip(*body))
    label_idx = header.index(label_column)

    raw_labels = columns[label_idx]
    classes = sorted(set(raw_labels), key=lambda s: (_as_float(s) is None, _as_float(s) or 0.0, s))
    if len(classes) != 2:
        raise ValueError(f"{path}: label column must have exactly 2 classes, found {len(classes)}")
    labels = np.array([classes.index(v) for v in raw_labels], dtype=np.float64)

    feats = []
    for j, col in enumerate(columns):
        if j == label_idx:
            continue
        parsed = [_as_float(c) for c in col]
        n_bad = sum(v is None for v in parsed)
        if n_bad == 0:
            feats.append(np.array(parsed, dtype=np.float64))
        elif n_bad == len(parsed):
            levels = sorted(set(col))
            feats.append(np.array([levels.index(c) for c in col], dtype=np.float64))
        else:
            bad = next(c for c, v in zip(col, parsed) if v is None)
            raise ValueError(f"{path}: column {header[j]!r} has unparseable cell {bad!r}")
    features = np.column_stack(feats) if feats else np.empty((len(body), 0))
    return make_dataset(features, labels, name=path.stem, seed=seed, val_fraction=val_fraction)


def save_csv(dataset: Dataset, path: str | Path, label_column: str = "label") -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{j}" for j in range(dataset.p)] + [label_column])
        for x, yv in zip(dataset.features, dataset.labels):
            w.writerow([repr(float(v)) for v in x] + [int(yv)])


def _separated_centers(rng: np.random.Generator, k: int, dim: int, separation: float,
                       attempts: int = 200) -> np.ndarray:
    """Cluster centers in [-3, 3]^dim, redrawn until opposite classes are ``separation`` apart.

    Falls back to the best draw seen when the target is not reached.
    """
    best, best_gap = None, -1.0
    for _ in range(attempts):
        centers = rng.uniform(-1.0, 1.0, size=(2 * k, dim)) * 3.0
        gap = np.linalg.norm(centers[0::2, None, :] - centers[None, 1::2, :], axis=-1).min()
        if gap > best_gap:
            best, best_gap = centers, gap
        if gap >= separation:
            break
    return best


def make_synthetic(spec: dict) -> Dataset:
    """Two-class Gaussian-cluster task with a nonlinear boundary.

    Keys: ``m`` rows, ``p`` features, ``noise`` label-flip fraction, ``seed``;
    optional ``clusters`` per class (default 3), ``spread`` cluster std
    relative to center spacing (default 0.25), ``separation`` minimum distance
    between centers of opposite classes (default 3.0), ``informative`` number of
    dimensions carrying signal (default all), ``positive`` share of class 1
    (default 0.5, must lie in [0.4, 0.6]), ``name``.
    Flips are drawn equally from both classes, so the class ratio is unchanged.
    """
    m, p = int(spec["m"]), int(spec["p"])
    noise = float(spec.get("noise", 0.0))
    seed = int(spec.get("seed", 0))
    if m < 50 or p < 2:
        raise ValueError("make_synthetic needs m >= 50 and p >= 2")
    k = int(spec.get("clusters", 3))
    spread = float(spec.get("spread", 0.25))
    positive = float(spec.get("positive", 0.5))
    if not 0.4 <= positive <= 0.6:
        raise ValueError("positive share must lie in [0.4, 0.6]")
    informative = min(int(spec.get("informative", p)), p)
    rng = np.random.default_rng(seed)

    centers = _separated_centers(rng, k, informative, float(spec.get("separation", 3.0)))
    labels = np.zeros(m)
    labels[m - int(round(positive * m)):] = 1.0
    rng.shuffle(labels)
    features = rng.normal(size=(m, p))
    for i in range(m):
        # even-indexed centers belong to class 0, odd to class 1
        c = 2 * rng.integers(k) + int(labels[i])
        features[i, :informative] = centers[c] + spread * 3.0 * rng.normal(size=informative)

    n_flip = int(round(noise * m / 2))
    if n_flip:
        flips = [rng.choice(np.flatnonzero(labels == c), size=n_flip, replace=False) for c in (0.0, 1.0)]
        for c, flip in zip((0.0, 1.0), flips):
            labels[flip] = 1.0 - c
    return make_dataset(features, labels, name=spec.get("name", "synthetic"), seed=seed)


def subsample_fidelity(dataset: Dataset, r: float, seed: int) -> Dataset:
    """Keep ``ceil(r * n_train)`` stratified training rows; validation untouched."""
    if not 0 < r <= 1:
        raise ValueError("fidelity r must be in (0, 1]")
    if r == 1:
        return dataset
    train = dataset.train_idx
    y = dataset.labels[train]
    target = math.ceil(r * len(train))
    idx_by_class = [train[y == c] for c in (0.0, 1.0)]
    exact = [r * len(ix) for ix in idx_by_class]
    counts = [int(math.floor(e)) for e in exact]
    # largest remainder so the total hits the target exactly
    for c in sorted((0, 1), key=lambda c: exact[c] - counts[c], reverse=True):
        if sum(counts) < target:
            counts[c] += 1
    rng = np.random.default_rng(seed)
    kept = []
    for ix, n in zip(idx_by_class, counts):
        n = min(n, len(ix))
        kept.append(ix[np.sort(rng.permutation(len(ix))[:n])])
    new_train = np.sort(np.concatenate(kept))
    if len(np.unique(dataset.labels[new_train])) < 2:
        raise ValueError(f"fidelity r={r} leaves a single class in the training set")
    return replace(dataset, train_idx=new_train)
