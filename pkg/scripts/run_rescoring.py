"""Standard model only: beam-5 baseline against beam-50 N-best rescoring with the swept alpha.

    python3 scripts/run_rescoring.py scripts/experiment.json
"""

import argparse
import logging
from pathlib import Path

from isochron.experiment import load_experiment, make_toy_corpora, run_pipeline


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("experiment", nargs="?", default=str(Path(__file__).with_name("experiment.json")))
    ap.add_argument("--out", help="override the output directory")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    path = Path(args.experiment)
    if not (path.parent / "data" / "test.tsv").exists():
        make_toy_corpora(path.parent / "data", seed=0)
    exp = load_experiment(path)
    exp.plans, exp.variants = ["single-stage"], ["Standard"]
    if args.out:
        exp.output_dir = Path(args.out)
    res = run_pipeline(exp)
    base, resc = res.reports
    print(f"beam-5     BLEU {base.bleu:6.2f}  compliance {base.compliance_pct:6.2f}%  mean LR {base.mean_lr:.3f}")
    print(f"rescored   BLEU {resc.bleu:6.2f}  compliance {resc.compliance_pct:6.2f}%  mean LR {resc.mean_lr:.3f}"
          f"  alpha {resc.config['rescore']['alpha']}")
    print(f"delta      BLEU {resc.bleu - base.bleu:+6.2f}  compliance {resc.compliance_pct - base.compliance_pct:+6.2f}")


if __name__ == "__main__":
    main()
