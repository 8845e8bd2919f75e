"""Run the directional reproductions and write their results as JSON.

    python3 scripts/reproduce.py fsl multifidelity early-stopping fidelity-trend --out results/
"""

import argparse
import json
import logging
from pathlib import Path

from mulch import experiments

RUNS = {
    "fsl": lambda: experiments.run_fsl_advantage(),
    "multifidelity": lambda: experiments.run_multifidelity(),
    "early-stopping": lambda: experiments.run_early_stopping(),
    "fidelity-trend": lambda: experiments.run_fidelity_trend(),
}


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("which", nargs="*", default=list(RUNS), choices=list(RUNS))
    ap.add_argument("--out", default="results")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name in args.which:
        result = RUNS[name]()
        (out / f"{name}.json").write_text(json.dumps(result, indent=2) + "\n")
        print(f"{name}: {'PASS' if result['passed'] else 'FAIL'}")


if __name__ == "__main__":
    main()
