"""Generate toy corpora, run the experiment file end to end and print the comparison table.

    python3 scripts/run_pipeline_comparison.py scripts/experiment.json
"""

import argparse
import logging
from pathlib import Path

from isochron.evaluation import comparison_table
from isochron.experiment import load_experiment, make_toy_corpora, run_pipeline


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("experiment", nargs="?", default=str(Path(__file__).with_name("experiment.json")))
    ap.add_argument("--plans", nargs="+", help="restrict to these plans")
    ap.add_argument("--variants", nargs="+", help="restrict to these variants")
    ap.add_argument("--regenerate", action="store_true", help="rewrite the toy corpora first")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    path = Path(args.experiment)
    data_dir = path.parent / "data"
    if args.regenerate or not (data_dir / "test.tsv").exists():
        make_toy_corpora(data_dir, seed=0)
    exp = load_experiment(path)
    if args.plans:
        exp.plans = args.plans
    if args.variants:
        exp.variants = args.variants
    res = run_pipeline(exp)
    print(comparison_table(res.reports))
    for tag, curve in res.curves.items():
        print(tag, " ".join(f"{c['alpha']:.2f}:{c['compliance_pct']:.0f}/{c['bleu']:.1f}" for c in curve))


if __name__ == "__main__":
    main()
