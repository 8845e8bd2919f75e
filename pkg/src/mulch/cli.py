"""Command-line entry point: ``mulch <subcommand> [flags]``.

Exit codes: 0 on success, 1 on runtime errors, 2 on usage errors.
"""

from __future__ import annotations

import argparse
import csv
import glob
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from mulch import engine, fanova, fidelity
from mulch.gbt import EarlyStopConfig
from mulch.priors import load_default_priors, load_priors, save_priors
from mulch.space import load_space, sample
from mulch.tasks import resolve_task

log = logging.getLogger("mulch")


class UsageError(Exception):
    pass


def _priors(spec: str | None, space):
    if spec in (None, "none"):
        return None, None
    ensemble, box = load_default_priors() if spec == "default" else load_priors(spec)
    if ensemble.space.names != space.names:
        raise UsageError(f"priors cover {ensemble.space.names}, space has {space.names}")
    return ensemble, box


def _early_stop(patience: int | None) -> EarlyStopConfig | None:
    return None if patience is None else EarlyStopConfig(patience=patience, enabled=True)


def _checked(fn, *args):
    """Invalid flag values surface as usage errors."""
    try:
        return fn(*args)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


# -- subcommands --------------------------------------------------------------


def cmd_tune(a) -> None:
    if not a.task:
        raise UsageError("tune needs --task")
    space = load_space(a.space)
    priors, box = _priors(a.priors if a.strategy in ("fsl-bo", "mulch-mf") else None, space)
    task = resolve_task(a.task, a.seed)
    cfg = _checked(engine.ExperimentConfig, space, a.strategy, a.budget, priors, box, _early_stop(a.patience),
                   a.seed, a.r_low)
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    hist = engine.run_experiment(cfg, engine.GbtObjective(task, cfg.early_stop, a.clock), out / "history.jsonl")
    summary = engine.summarize(hist)
    summary.update({"task": task.name, "budget": a.budget, "seed": a.seed, "clock": a.clock})
    _write_json(out / "summary.json", summary)
    best = summary["best"]
    print(f"best accuracy {best['metric']:.4f}" if best else "no full-fidelity observation")


def cmd_benchmark(a) -> None:
    if not a.task:
        raise UsageError("benchmark needs --task")
    space = load_space(a.space)
    labels = [s for part in a.strategy.split(",") for s in [part.strip()] if s]
    parsed = [_checked(engine.parse_strategy, label, a.r_low) for label in labels]
    needs_priors = any(kind in ("fsl-bo", "mulch-mf") for kind, _ in parsed)
    priors, box = _priors(a.priors if needs_priors else None, space)
    tasks = [resolve_task(t, a.seed) for part in a.task for t in part.split(",") if t]
    settings = _checked(engine.BenchmarkSettings, space, a.budget, a.repeats, a.seed, priors, box,
                        _early_stop(a.patience), a.clock, a.r_low)
    for kind, r_low in parsed:
        _checked(engine.ExperimentConfig, space, kind, a.budget, priors, box, None, a.seed, r_low)
    out = Path(a.out)
    report = engine.benchmark(tasks, labels, settings, jobs=a.jobs, run_dir=out / "runs")
    engine.write_report(report, out)
    for row in report["rows"]:
        print(f"{row['task']:>12} {row['strategy']:>14} median {row['final_median']:.4f} "
              f"time x{row['time_normalized']:.2f}")


def cmd_fanova(a) -> None:
    space = load_space(a.space)
    out = Path(a.out)
    if a.evals:
        records = fanova.read_evals(a.evals, space)
    elif a.task:
        task = resolve_task(a.task, a.seed)
        objective = engine.GbtObjective(task, _early_stop(a.patience))
        configs = sample(space, a.n, "quasi", a.seed)
        records = [fanova.EvaluationRecord(c, objective(c, 1.0, a.seed)[0]) for c in configs]
        fanova.write_evals(out.with_name(out.stem + "_evals.csv"), space, records)
    else:
        raise UsageError("fanova needs --evals or --task")
    report = fanova.compute_importances(records, space, fanova.ForestConfig(n_trees=a.trees), a.seed)
    _write_json(out, report.to_dict())
    for name in fanova.rank_parameters(report):
        print(f"{name:>18} {report.score(name):.4f}")


def cmd_fidelity_scores(a) -> None:
    out = Path(a.out)
    if a.sweep:
        sweep = fidelity.read_sweep(a.sweep)
    elif a.task:
        space = load_space(a.space)
        task = resolve_task(a.task, a.seed)
        objective = engine.GbtObjective(task, _early_stop(a.patience))
        configs = sample(space, a.n, "quasi", a.seed)
        levels = sorted({float(x) for x in a.fidelities.split(",")} | {1.0})
        metrics = {p: tuple(objective(c, p, a.seed)[0] for c in configs) for p in levels}
        sweep = fidelity.FidelitySweep(tuple(str(i) for i in range(len(configs))), metrics)
        fidelity.write_sweep(out.with_name(out.stem + "_sweep.csv"), sweep)
    else:
        raise UsageError("fidelity-scores needs --sweep or --task")
    rows = fidelity.score_table(sweep)
    fidelity.write_scores(out, rows)
    for r in rows:
        print(f"p={r.p:<5} correlation {r.correlation:.3f} precision {r.precision:.3f} recall {r.recall:.3f}")


def cmd_learn_priors(a) -> None:
    if not a.histories:
        raise UsageError("learn-priors needs --histories")
    space = load_space(a.space)
    paths = sorted(glob.glob(a.histories, recursive=True))
    if not paths:
        raise RuntimeError(f"no history files match {a.histories!r}")
    histories = {p: engine.ExperimentHistory.read(p) for p in paths}
    per_task = a.per_task_count
    ensemble, box = engine.learn_priors(histories, space, per_task_count=per_task,
                                        top_fraction=None if per_task else a.top_fraction, seed=a.seed)
    save_priors(a.out, ensemble, box)
    print(f"learned priors from {len(paths)} histories -> {a.out}")


def cmd_serve(a) -> None:
    from mulch.service.http import serve

    serve(a.port, a.data_dir or os.environ.get("MULCH_DATA_DIR"), a.host)


def _strategy_of(path: Path) -> str:
    summary = path.parent / "summary.json"
    if path.name == "history.jsonl" and summary.exists():
        return json.loads(summary.read_text())["strategy"]
    parts = path.stem.split("__")
    return parts[1] if len(parts) >= 2 else path.stem


def cmd_report(a) -> None:
    if not a.runs:
        raise UsageError("report needs --runs")
    paths = sorted(Path(a.runs).rglob("*.jsonl"))
    if not paths:
        raise RuntimeError(f"no history files under {a.runs}")
    series: dict[str, list[engine.ExperimentHistory]] = {}
    for p in paths:
        series.setdefault(_strategy_of(p), []).append(engine.ExperimentHistory.read(p))
    top = max(o.budget_after for hs in series.values() for h in hs for o in h.observations)
    grid = list(range(1, int(np.ceil(top - 1e-9)) + 1))
    names = sorted(series)
    columns = {}
    for name in names:
        curves = np.array([[np.nan if v is None else v for v in engine.curve_on_grid(h, grid)]
                           for h in series[name]], dtype=float)
        with np.errstate(all="ignore"):
            columns[name] = [None if np.all(np.isnan(c)) else float(np.nanmedian(c)) for c in curves.T]
    with Path(a.out).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["budget"] + names)
        for i, b in enumerate(grid):
            w.writerow([b] + ["" if columns[n][i] is None else repr(columns[n][i]) for n in names])
    print(f"wrote {len(names)} series over {len(grid)} budget points to {a.out}")


# -- parser -------------------------------------------------------------------


def build_parser() -> tuple[argparse.ArgumentParser, dict[str, argparse.ArgumentParser]]:
    parser = argparse.ArgumentParser(prog="mulch", description="Hyperparameter tuning for boosted trees.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="cmd", required=True, metavar="subcommand")
    subs = {}

    def add(name: str, func, help_text: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.set_defaults(func=func)
        p.add_argument("--config", help="JSON file of flag values (explicit flags win)")
        subs[name] = p
        return p

    p = add("tune", cmd_tune, "run one tuning experiment")
    p.add_argument("--task", help="synthetic:<name> or a CSV path")
    p.add_argument("--space", default="mulch5")
    p.add_argument("--strategy", default="fsl-bo", choices=engine.STRATEGIES)
    p.add_argument("--budget", type=float, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--priors", default="default", help="'default', 'none' or a priors.json path")
    p.add_argument("--r-low", type=float, default=0.1)
    p.add_argument("--patience", type=int, default=None, help="enable early stopping with this patience")
    p.add_argument("--clock", default="work", choices=engine.CLOCKS)
    p.add_argument("--out", default="run")

    p = add("benchmark", cmd_benchmark, "compare strategies over tasks and repeats")
    p.add_argument("--task", action="append", help="repeatable or comma-separated")
    p.add_argument("--space", default="mulch5")
    p.add_argument("--strategy", default="random,bo,fsl-bo,mulch-mf-0.1")
    p.add_argument("--budget", type=float, default=50)
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--priors", default="default")
    p.add_argument("--r-low", type=float, default=0.1)
    p.add_argument("--patience", type=int, default=None)
    p.add_argument("--clock", default="work", choices=engine.CLOCKS)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", default="bench")

    p = add("fanova", cmd_fanova, "individual hyperparameter importances")
    p.add_argument("--evals", help="CSV with one column per parameter plus 'metric'")
    p.add_argument("--task", help="sweep this task instead of reading --evals")
    p.add_argument("--space", default="xgb12")
    p.add_argument("--n", type=int, default=1024, help="quasi-random sweep size with --task")
    p.add_argument("--trees", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--patience", type=int, default=None)
    p.add_argument("--out", default="importances.json")

    p = add("fidelity-scores", cmd_fidelity_scores, "correlation/precision/recall per fidelity")
    p.add_argument("--sweep", help="CSV with config-id, fidelity, metric")
    p.add_argument("--task", help="sweep this task instead of reading --sweep")
    p.add_argument("--space", default="mulch5")
    p.add_argument("--n", type=int, default=256)
    p.add_argument("--fidelities", default="0.1,0.3,0.5,0.7")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--patience", type=int, default=None)
    p.add_argument("--out", default="scores.csv")

    p = add("learn-priors", cmd_learn_priors, "metalearn priors from experiment histories")
    p.add_argument("--histories", help="glob of history JSON-lines files")
    p.add_argument("--space", default="mulch5")
    p.add_argument("--top-fraction", type=float, default=0.1)
    p.add_argument("--per-task-count", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="priors.json")

    p = add("serve", cmd_serve, "run the HTTP suggestion service")
    p.add_argument("--port", type=int, default=8080)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--data-dir", default=None, help="defaults to $MULCH_DATA_DIR")

    p = add("report", cmd_report, "best-seen curves (CSV) from history files")
    p.add_argument("--runs", help="directory searched recursively for *.jsonl histories")
    p.add_argument("--out", default="curves.csv")
    return parser, subs


def parse(argv: list[str]) -> argparse.Namespace:
    parser, subs = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "config", None):
        try:
            doc = json.loads(Path(args.config).read_text())
        except (OSError, ValueError) as exc:
            parser.error(f"cannot read --config: {exc}")
        sp = subs[args.cmd]
        known = {act.dest for act in sp._actions}
        doc = {k.replace("-", "_"): v for k, v in doc.items()}
        unknown = set(doc) - known
        if unknown:
            sp.error(f"unknown keys in --config: {sorted(unknown)}")
        sp.set_defaults(**doc)
        args = parser.parse_args(argv)
    return args


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    args = parse(argv)  # argparse exits with 2 on usage errors
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except UsageError as exc:
        print(f"mulch {args.cmd}: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure
        log.debug("failure", exc_info=True)
        print(f"mulch {args.cmd}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
