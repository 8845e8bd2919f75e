"""Metalearn the shipped priors.json from uniform random sweeps of the meta tasks."""

import argparse
from pathlib import Path

from mulch.engine import ExperimentHistory, GbtObjective, learn_priors, run_experiment, ExperimentConfig
from mulch.priors import default_priors_path, save_priors
from mulch.space import default_space
from mulch.tasks import resolve_task, task_names


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--evals", type=int, default=128, help="sweep size per task")
    ap.add_argument("--out", default=str(default_priors_path()))
    ap.add_argument("--histories", default=None, help="optional directory to keep the sweeps")
    args = ap.parse_args()
    space = default_space("mulch5")
    histories: dict[str, ExperimentHistory] = {}
    for i, name in enumerate(task_names(meta=True)):
        task = resolve_task(f"synthetic:{name}")
        sink = None
        if args.histories:
            Path(args.histories).mkdir(parents=True, exist_ok=True)
            sink = Path(args.histories) / f"{name}.jsonl"
        # random strategy = uniform sweep; a distinct seed per task
        cfg = ExperimentConfig(space, "random", args.evals, seed=1000 + i)
        histories[name] = run_experiment(cfg, GbtObjective(task), sink)
        print(f"{name}: best {histories[name].final_best():.3f}")
    ensemble, box = learn_priors(histories, space, top_fraction=0.1)
    save_priors(args.out, ensemble, box)
    print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
