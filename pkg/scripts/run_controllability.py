"""Train an EncTok model on balanced toy data and report length ratios per verbosity class.

    python3 scripts/run_controllability.py --out runs/controllability
"""

import argparse
import json
import logging

from isochron.studies import ControllabilityConfig, controllability_study
from isochron.train import TrainConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/controllability")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--variant", default="EncTok")
    ap.add_argument("--train-size", type=int, default=3000)
    ap.add_argument("--heldout-size", type=int, default=300)
    ap.add_argument("--epochs", type=int, default=20)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    cfg = ControllabilityConfig(seed=args.seed, train_size=args.train_size,
                                heldout_size=args.heldout_size, variant=args.variant,
                                train=TrainConfig(max_epochs=args.epochs))
    res = controllability_study(cfg, args.out)
    for cls, row in res["per_class"].items():
        print(f"{cls:<7} mean LR {row['mean_lr']:.3f}  compliance {row['compliance_pct']:.1f}%")
    print(json.dumps(res["gaps"]))


if __name__ == "__main__":
    main()
