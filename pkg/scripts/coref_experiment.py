"""Synthetic coreference experiment: copy head of a FULL-mode model vs. the
vocabulary argmax of an identically budgeted RANDOM_SUBWORD model.

    python scripts/coref_experiment.py            # default configuration
    python scripts/coref_experiment.py --steps 200 --n-stories 2000   # smoke run
"""

import argparse
import json
import logging
from dataclasses import fields, replace

from corefkit.experiment import ExperimentConfig, run_learning_signal


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    defaults = ExperimentConfig()
    for f in fields(ExperimentConfig):
        ap.add_argument("--" + f.name.replace("_", "-"), type=type(getattr(defaults, f.name)), default=None)
    ap.add_argument("-v", "--verbose", action="store_true")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(asctime)s %(message)s")

    overrides = {f.name: getattr(args, f.name) for f in fields(ExperimentConfig) if getattr(args, f.name) is not None}
    result = run_learning_signal(replace(defaults, **overrides))
    print(json.dumps(result, indent=2))


if __name__ == "__main__":
    main()
