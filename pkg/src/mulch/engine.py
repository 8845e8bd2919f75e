"""Experiment orchestration: strategies, histories, best-seen curves and benchmarks."""

from __future__ import annotations

import csv
import json
import logging
import math
import statistics
from collections.abc import Mapping, Sequence
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Any

import numpy as np

from mulch import gp as gpm
from mulch import mulch_mf
from mulch.gbt import Dataset, EarlyStopConfig, objective as gbt_objective
from mulch.priors import LengthscaleBox, PriorEnsemble, sample_prior
from mulch.space import Configuration, SearchSpace, sample

log = logging.getLogger(__name__)

STRATEGIES = ("random", "bo", "fsl-bo", "mulch-mf")
N_INIT = 8
FSL_SAMPLES = 8
CLOCKS = ("work", "wall")

Objective = mulch_mf.Objective


@dataclass(frozen=True)
class ExperimentConfig:
    space: SearchSpace
    strategy: str
    budget: float
    priors: PriorEnsemble | None = None
    lengthscale_box: LengthscaleBox | None = None
    early_stop: EarlyStopConfig | None = None
    seed: int = 0
    r_low: float = 0.1
    n_candidates: int = 256
    n_starts: int = 8
    direction: str = "max"

    def __post_init__(self) -> None:
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}; choose from {STRATEGIES}")
        if not self.budget >= 1:
            raise ValueError("budget must be >= 1")
        if self.strategy in ("random", "bo", "fsl-bo") and int(self.budget) != self.budget:
            raise ValueError(f"{self.strategy} needs an integral budget")
        if self.strategy == "fsl-bo" and self.priors is None:
            raise ValueError("fsl-bo requires priors")
        if self.direction != "max":
            raise ValueError("only maximization is supported")


@dataclass(frozen=True)
class Observation:
    config: Configuration
    fidelity: float
    metric: float
    cost: float  # budget units
    wall_time: float  # objective seconds under the chosen clock
    timestamp: float  # cumulative objective seconds after this evaluation
    budget_after: float
    iteration: int = 0
    failed: bool = False

    def to_json(self) -> dict:
        return {"iteration": self.iteration, "config": self.config.as_dict(), "fidelity": self.fidelity,
                "metric": None if self.failed else self.metric, "cost": self.cost,
                "wall_time": self.wall_time, "timestamp": self.timestamp,
                "budget_after": self.budget_after, "failed": self.failed}

    @classmethod
    def from_json(cls, d: Mapping) -> "Observation":
        failed = bool(d.get("failed")) or d["metric"] is None
        return cls(Configuration(d["config"]), float(d["fidelity"]),
                   float("-inf") if failed else float(d["metric"]), float(d["cost"]),
                   float(d["wall_time"]), float(d["timestamp"]), float(d["budget_after"]),
                   int(d.get("iteration", 0)), failed)


@dataclass
class ExperimentHistory:
    strategy: str
    observations: list[Observation] = field(default_factory=list)
    sink: Path | None = None

    def append(self, obs: Observation) -> None:
        self.observations.append(obs)
        if self.sink is not None:
            with self.sink.open("a") as fh:
                fh.write(json.dumps(obs.to_json(), sort_keys=True) + "\n")

    @property
    def consumed(self) -> Fraction:
        return sum((Fraction(str(o.cost)) for o in self.observations), Fraction(0))

    @property
    def total_time(self) -> float:
        return float(sum(o.wall_time for o in self.observations))

    def best_seen_trace(self) -> list[float]:
        """Running max of full-fidelity metrics (−inf until the first one)."""
        out, best = [], float("-inf")
        for o in self.observations:
            if o.fidelity == 1.0 and not o.failed:
                best = max(best, o.metric)
            out.append(best)
        return out

    def final_best(self) -> float:
        return self.best_seen_trace()[-1] if self.observations else float("-inf")

    def write(self, path: str | Path) -> None:
        with Path(path).open("w") as fh:
            for o in self.observations:
                fh.write(json.dumps(o.to_json(), sort_keys=True) + "\n")

    @classmethod
    def read(cls, path: str | Path, strategy: str | None = None) -> "ExperimentHistory":
        with Path(path).open() as fh:
            obs = [Observation.from_json(json.loads(line)) for line in fh if line.strip()]
        return cls(strategy or Path(path).stem, obs)


def best_seen(history: ExperimentHistory, at_budget: float) -> tuple[Configuration, float]:
    """Best full-fidelity observation whose cumulative budget is within ``at_budget``."""
    best = None
    for o in history.observations:
        if o.budget_after > at_budget + 1e-12:
            break
        if o.fidelity == 1.0 and not o.failed and (best is None or o.metric > best.metric):
            best = o
    if best is None:
        raise ValueError(f"no full-fidelity observation within budget {at_budget}")
    return best.config, best.metric


def fsl_warm_start(priors: PriorEnsemble, k: int = FSL_SAMPLES, seed: int = 0,
                   space: SearchSpace | None = None) -> list[Configuration]:
    if k < 1:
        raise ValueError("k must be >= 1")
    return sample_prior(priors, k, seed, space=space)


# -- objectives ---------------------------------------------------------------


@dataclass(frozen=True)
class GbtObjective:
    """Wraps the boosted-tree trainer as ``(config, fidelity, seed) -> (accuracy, seconds)``.

    ``clock='work'`` reports deterministic modeled seconds, ``'wall'`` measured ones.
    """

    task: Dataset
    early_stop: EarlyStopConfig | None = None
    clock: str = "work"

    def __post_init__(self) -> None:
        if self.clock not in CLOCKS:
            raise ValueError(f"clock must be one of {CLOCKS}")

    def __call__(self, config: Mapping[str, Any], fidelity: float, seed: int) -> tuple[float, float]:
        res = gbt_objective(self.task, config, fidelity, self.early_stop, seed)
        return res.accuracy, (res.modeled_time if self.clock == "work" else res.wall_time)


# -- strategies ---------------------------------------------------------------


def _evaluate(history: ExperimentHistory, objective: Objective, config: Configuration, fidelity: float,
              seed: int, iteration: int) -> None:
    try:
        metric, seconds = objective(config, fidelity, seed)
        metric = float(metric)
        if not math.isfinite(metric):
            raise ValueError(f"non-finite metric {metric}")
        failed = False
    except Exception as exc:  # recorded, budget charged, loop continues
        log.warning("evaluation failed: %s", exc)
        metric, seconds, failed = float("-inf"), 0.0, True
    prev = history.observations[-1] if history.observations else None
    budget_after = float((Fraction(str(prev.budget_after)) if prev else Fraction(0)) + Fraction(str(fidelity)))
    timestamp = (prev.timestamp if prev else 0.0) + float(seconds)
    history.append(Observation(config, fidelity, metric, fidelity, float(seconds), timestamp,
                               budget_after, iteration, failed))


def _bo_loop(cfg: ExperimentConfig, objective: Objective, history: ExperimentHistory,
             init: Sequence[Configuration], box: LengthscaleBox | None) -> None:
    budget = int(cfg.budget)
    for c in init[:budget]:
        _evaluate(history, objective, c, 1.0, cfg.seed, 0)
    for it in range(1, budget - len(init) + 1):
        ok = [o for o in history.observations if not o.failed]
        seed = cfg.seed * 100_003 + it
        if not ok:
            nxt = sample(cfg.space, 1, "quasi", seed)[0]
        else:
            model = gpm.fit_configs(cfg.space, [o.config for o in ok], [o.metric for o in ok], box,
                                    cfg.n_starts, seed)
            nxt = gpm.suggest(model, cfg.space, max(o.metric for o in ok), cfg.n_candidates, seed)
        _evaluate(history, objective, nxt, 1.0, cfg.seed, it)


def run_experiment(cfg: ExperimentConfig, objective: Objective,
                   history_path: str | Path | None = None) -> ExperimentHistory:
    """Run one strategy to budget; observations are appended to ``history_path`` as they arrive."""
    sink = None
    if history_path is not None:
        sink = Path(history_path)
        sink.write_text("")
    history = ExperimentHistory(cfg.strategy, sink=sink)
    if cfg.strategy == "random":
        for c in sample(cfg.space, int(cfg.budget), "pseudo", cfg.seed):
            _evaluate(history, objective, c, 1.0, cfg.seed, 0)
    elif cfg.strategy == "bo":
        init = sample(cfg.space, min(N_INIT, int(cfg.budget)), "quasi", cfg.seed)
        _bo_loop(cfg, objective, history, init, None)
    elif cfg.strategy == "fsl-bo":
        init = fsl_warm_start(cfg.priors, min(FSL_SAMPLES, int(cfg.budget)), cfg.seed, cfg.space)
        _bo_loop(cfg, objective, history, init, cfg.lengthscale_box)
    else:
        mf_cfg = mulch_mf.MulchMfConfig(budget=cfg.budget, r_low=cfg.r_low, seed=cfg.seed,
                                        n_candidates=cfg.n_candidates, n_starts=cfg.n_starts)
        timestamp = [0.0]

        def record(o: mulch_mf.FidelityObservation) -> None:
            timestamp[0] += o.wall_time
            history.append(Observation(o.config, o.fidelity, o.metric, o.fidelity, o.wall_time,
                                       timestamp[0], o.budget_after, o.iteration, o.failed))

        mulch_mf.run(mf_cfg, cfg.space, objective, cfg.priors, cfg.lengthscale_box, on_observation=record)
    return history


# -- benchmark ----------------------------------------------------------------


def parse_strategy(label: str, default_r_low: float = 0.1) -> tuple[str, float]:
    """``mulch-mf-0.25`` -> ("mulch-mf", 0.25); other labels pass through."""
    if label.startswith("mulch-mf-"):
        return "mulch-mf", float(label[len("mulch-mf-"):])
    if label not in STRATEGIES:
        raise ValueError(f"unknown strategy {label!r}")
    return label, default_r_low


@dataclass(frozen=True)
class BenchmarkSettings:
    space: SearchSpace
    budget: float
    repeats: int = 5
    seed: int = 0
    priors: PriorEnsemble | None = None
    lengthscale_box: LengthscaleBox | None = None
    early_stop: EarlyStopConfig | None = None
    clock: str = "work"
    r_low: float = 0.1
    n_starts: int = 8
    n_candidates: int = 256


def cell_seed(seed: int, repeat: int) -> int:
    # shared across strategies so comparisons are paired
    return seed * 1000 + repeat


def _run_cell(task: Dataset, label: str, repeat: int, s: BenchmarkSettings) -> ExperimentHistory:
    strategy, r_low = parse_strategy(label, s.r_low)
    cfg = ExperimentConfig(s.space, strategy, s.budget, s.priors, s.lengthscale_box, s.early_stop,
                           cell_seed(s.seed, repeat), r_low, s.n_candidates, s.n_starts)
    hist = run_experiment(cfg, GbtObjective(task, s.early_stop, s.clock))
    hist.strategy = label
    return hist


def _quartiles(xs: Sequence[float]) -> tuple[float, float, float]:
    q1, med, q3 = np.quantile(np.asarray(xs, dtype=float), [0.25, 0.5, 0.75])
    return float(q1), float(med), float(q3)


def curve_on_grid(history: ExperimentHistory, grid: Sequence[float]) -> list[float | None]:
    out = []
    for b in grid:
        try:
            out.append(best_seen(history, b)[1])
        except ValueError:
            out.append(None)
    return out


def benchmark(tasks: Sequence[Dataset], strategies: Sequence[str], settings: BenchmarkSettings,
              jobs: int = 1, run_dir: str | Path | None = None) -> dict:
    """Run every (task, strategy, repeat) cell and reduce to a report keyed by task and strategy.

    Random search always runs (as the time-normalization reference) even when
    not requested.
    """
    if settings.repeats < 1:
        raise ValueError("repeats must be >= 1")
    labels = list(dict.fromkeys(strategies))
    run_labels = labels + ([] if "random" in labels else ["random"])
    cells = [(ti, label, rep) for ti in range(len(tasks)) for label in run_labels
             for rep in range(settings.repeats)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(_run_cell, tasks[ti], label, rep, settings) for ti, label, rep in cells]
            results = [f.result() for f in futures]
    else:
        results = [_run_cell(tasks[ti], label, rep, settings) for ti, label, rep in cells]
    by_cell = dict(zip(cells, results))
    if run_dir is not None:
        run_dir = Path(run_dir)
        run_dir.mkdir(parents=True, exist_ok=True)
        for (ti, label, rep), hist in by_cell.items():
            if label in labels:
                hist.write(run_dir / f"{tasks[ti].name}__{label}__{rep}.jsonl")

    grid = list(range(1, int(math.floor(settings.budget)) + 1))
    rows = []
    for ti, task in enumerate(tasks):
        ref = statistics.fmean(by_cell[(ti, "random", r)].total_time for r in range(settings.repeats))
        for label in labels:
            hists = [by_cell[(ti, label, r)] for r in range(settings.repeats)]
            finals = [h.final_best() for h in hists]
            times = [h.total_time for h in hists]
            q1, med, q3 = _quartiles(finals)
            curves = np.array([[np.nan if v is None else v for v in curve_on_grid(h, grid)] for h in hists])
            with np.errstate(all="ignore"):
                median_curve = [None if np.all(np.isnan(col)) else float(np.nanmedian(col)) for col in curves.T]
            mean_time = statistics.fmean(times)
            rows.append({
                "task": task.name, "strategy": label, "repeats": settings.repeats,
                "final_q1": q1, "final_median": med, "final_q3": q3,
                "time_mean": mean_time, "time_median": float(np.median(times)),
                "time_normalized": mean_time / ref if ref > 0 else float("nan"),
                "budget_grid": grid, "best_seen_median": median_curve,
                "finals": finals, "times": times,
            })
    return {"settings": {"budget": settings.budget, "repeats": settings.repeats, "seed": settings.seed,
                         "clock": settings.clock, "strategies": labels,
                         "tasks": [t.name for t in tasks]},
            "rows": rows}


REPORT_COLUMNS = ("task", "strategy", "repeats", "final_q1", "final_median", "final_q3",
                  "time_mean", "time_median", "time_normalized")


def write_report(report: dict, out_dir: str | Path) -> tuple[Path, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path, json_path = out_dir / "report.csv", out_dir / "report.json"
    with csv_path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(REPORT_COLUMNS)
        for row in report["rows"]:
            w.writerow([row[c] if isinstance(row[c], str) else repr(row[c]) for c in REPORT_COLUMNS])
    json_path.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    return csv_path, json_path


def summarize(history: ExperimentHistory) -> dict:
    try:
        config, metric = best_seen(history, float("inf"))
        best = {"config": config.as_dict(), "metric": metric}
    except ValueError:
        best = None
    return {"strategy": history.strategy, "n_observations": len(history.observations),
            "budget_consumed": float(history.consumed), "total_time": history.total_time,
            "best": best}



# -- prior metalearning -------------------------------------------------------


def learn_priors(histories: Mapping[str, ExperimentHistory], space: SearchSpace,
                 per_task_count: int | None = None, top_fraction: float | None = 0.1,
                 quantile_pairs: Mapping[str, tuple[float, float]] | None = None,
                 seed: int = 0) -> tuple[PriorEnsemble, LengthscaleBox]:
    """Prior ensemble from each history's top configurations, plus a lengthscale box
    from GP fits to each history's full-fidelity observations."""
    from mulch.priors import aggregate_top_configs, build_ensemble, learn_lengthscale_box

    records, lengthscales = {}, []
    for name, hist in histories.items():
        full = [o for o in hist.observations if o.fidelity == 1.0 and not o.failed]
        records[name] = [(o.config, o.metric) for o in full]
        model = gpm.fit_configs(space, [o.config for o in full], [o.metric for o in full], None, 8, seed)
        lengthscales.append(model.kernel.lengthscales)
    if per_task_count is not None:
        top_fraction = None
    pool = aggregate_top_configs(records, per_task_count=per_task_count, top_fraction=top_fraction)
    return build_ensemble(pool, space, quantile_pairs), learn_lengthscale_box(lengthscales)
