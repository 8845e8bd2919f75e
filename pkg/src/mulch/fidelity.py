"""Similarity of a low-fidelity sweep to the full-fidelity sweep of the same configurations."""

from __future__ import annotations

import csv
import math
from collections import defaultdict
from collections.abc import Mapping, Sequence
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np

FULL = 1.0


@dataclass(frozen=True)
class FidelitySweep:
    """Metric lists per fidelity, aligned by configuration index."""

    config_ids: tuple[str, ...]
    metrics: Mapping[float, tuple[float, ...]]

    def __post_init__(self) -> None:
        m = len(self.config_ids)
        metrics = {float(p): tuple(float(v) for v in ys) for p, ys in self.metrics.items()}
        for p, ys in metrics.items():
            if len(ys) != m:
                raise ValueError(f"fidelity {p}: {len(ys)} metrics for {m} configurations")
        object.__setattr__(self, "metrics", metrics)

    @property
    def m(self) -> int:
        return len(self.config_ids)


@dataclass(frozen=True)
class ScoreRow:
    p: float
    correlation: float
    precision: float
    recall: float


def normalize(y: Sequence[float]) -> np.ndarray:
    """Min-max normalize one list; a constant list maps to all ones.

    Arithmetic is exact on each value's shortest decimal form, so metrics
    written in decimal (0.7, 0.5, 0.9) normalize without rounding drift.
    """
    y = np.asarray(y, dtype=float)
    if y.size == 0:
        raise ValueError("cannot normalize an empty list")
    lo, hi = y.min(), y.max()
    if hi == lo:
        return np.ones_like(y)
    q = [Fraction(repr(float(v))) for v in y]
    q_lo, span = Fraction(repr(float(lo))), Fraction(repr(float(hi))) - Fraction(repr(float(lo)))
    return np.array([float((v - q_lo) / span) for v in q])


def top_indices(y: Sequence[float]) -> np.ndarray:
    """Indices of the ``ceil(m/10)`` largest values; ties go to the lower index."""
    y = np.asarray(y, dtype=float)
    k = math.ceil(len(y) / 10)
    return np.lexsort((np.arange(len(y)), -y))[:k]


def correlation_score(y0: Sequence[float], y1: Sequence[float]) -> float:
    a, b = np.asarray(y0, dtype=float), np.asarray(y1, dtype=float)
    if a.shape != b.shape or a.size < 2:
        raise ValueError("need two equal-length lists with at least 2 entries")
    if np.ptp(a) == 0 or np.ptp(b) == 0:
        raise ValueError("correlation undefined for a constant list")
    da, db = a - a.mean(), b - b.mean()
    r = float(da @ db / math.sqrt(float(da @ da) * float(db @ db)))
    return min(1.0, max(-1.0, r))


def _check(a: Sequence[float], b: Sequence[float]) -> None:
    if len(a) != len(b) or len(a) < 1:
        raise ValueError("need two equal-length non-empty lists")


def precision_score(y0: Sequence[float], y1: Sequence[float]) -> float:
    """Mean normalized ``y1`` over the top decile of ``y0``."""
    _check(y0, y1)
    return math.fsum(normalize(y1)[top_indices(y0)]) / math.ceil(len(y0) / 10)


def recall_score(y0: Sequence[float], y1: Sequence[float]) -> float:
    """Mean normalized ``y0`` over the top decile of ``y1``."""
    _check(y0, y1)
    return math.fsum(normalize(y0)[top_indices(y1)]) / math.ceil(len(y1) / 10)


def score_table(sweep: FidelitySweep) -> list[ScoreRow]:
    if FULL not in sweep.metrics:
        raise ValueError("sweep has no full-fidelity (1.0) metrics")
    full = sweep.metrics[FULL]
    rows = []
    for p in sorted(sweep.metrics):
        if p == FULL:
            continue
        low = sweep.metrics[p]
        rows.append(ScoreRow(p, correlation_score(low, full), precision_score(low, full),
                             recall_score(low, full)))
    return rows


def read_sweep(path: str | Path) -> FidelitySweep:
    """Read long-format ``config-id,fidelity,metric`` rows."""
    table: dict[float, dict[str, float]] = defaultdict(dict)
    ids: list[str] = []
    with Path(path).open(newline="") as fh:
        for row in csv.DictReader(fh):
            cid, p = row["config-id"], float(row["fidelity"])
            if cid in table[p]:
                raise ValueError(f"duplicate metric for config {cid!r} at fidelity {p}")
            table[p][cid] = float(row["metric"])
            if cid not in ids:
                ids.append(cid)
    metrics = {}
    for p, by_id in table.items():
        missing = [c for c in ids if c not in by_id]
        if missing:
            raise ValueError(f"fidelity {p} lacks configs {missing[:3]}")
        metrics[p] = tuple(by_id[c] for c in ids)
    return FidelitySweep(tuple(ids), metrics)


def write_sweep(path: str | Path, sweep: FidelitySweep) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["config-id", "fidelity", "metric"])
        for p in sorted(sweep.metrics):
            for cid, v in zip(sweep.config_ids, sweep.metrics[p]):
                w.writerow([cid, repr(p), repr(v)])


def write_scores(path: str | Path, rows: Sequence[ScoreRow]) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["p", "correlation", "precision", "recall"])
        for r in rows:
            w.writerow([repr(r.p), repr(r.correlation), repr(r.precision), repr(r.recall)])
