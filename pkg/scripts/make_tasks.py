"""Regenerate the bundled task CSVs under src/mulch/data/tasks."""

import argparse

from mulch.gbt.data import save_csv
from mulch.tasks import TASK_DIR, build, task_names


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default=str(TASK_DIR))
    args = ap.parse_args()
    TASK_DIR.mkdir(parents=True, exist_ok=True)
    for name in task_names() + task_names(meta=True):
        data = build(name)
        save_csv(data, f"{args.out}/{name}.csv")
        print(f"{name}: {data.m} rows x {data.p} features, positive share {data.labels.mean():.2f}")


if __name__ == "__main__":
    main()
