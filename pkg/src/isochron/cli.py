"""``isochron`` command line: toy data, training plans, decoding, rescoring, evaluation.

Exit codes: 0 success, 1 usage error, 2 data/validation error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable, Sequence

from . import data, decode, evaluation, experiment, model, rescore, train

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_RUNTIME = 0, 1, 2, 3

log = logging.getLogger("isochron")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _echo(command: str, **resolved) -> None:
    print(json.dumps({"command": command, **resolved}, sort_keys=True, default=str), file=sys.stderr)


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("ISOCHRON_THREADS", "1")))
    except ValueError:
        raise data.DataError("ISOCHRON_THREADS must be an integer") from None


def _pmap(fn: Callable, items: Sequence) -> list:
    """Order-preserving map, parallel up to ISOCHRON_THREADS workers."""
    n = _threads()
    if n == 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))


def _read_sources(path: str) -> list[str]:
    if path.endswith(".tsv"):
        return [ex.source for ex in data.load_corpus(path)]
    return _read_lines(path)


def _read_refs(path: str) -> list[str]:
    if path.endswith(".tsv"):
        return [ex.target for ex in data.load_corpus(path)]
    return _read_lines(path)


def _read_lines(path: str) -> list[str]:
    with open(path, encoding="utf-8") as fh:
        return [line.rstrip("\n") for line in fh]


def _read_hyps(path: str) -> list[str]:
    if path.endswith(".jsonl"):
        return [nb.best().text for nb in decode.read_nbest(path)]
    return _read_lines(path)


def _verbosity(text: str | None) -> data.Verbosity | None:
    return data.Verbosity.parse(text) if text else None


# -- subcommands -----------------------------------------------------------------------

def cmd_make_toy(args) -> int:
    if args.spec:
        spec = data.SyntheticSpec.load(args.spec)
        if args.seed is not None:
            spec.seed = args.seed
        _echo("make-toy", spec=args.spec, seed=spec.seed, out=args.out)
        data.save_corpus(data.make_synthetic_corpus(spec), args.out)
        return EXIT_OK
    seed = 0 if args.seed is None else args.seed
    _echo("make-toy", seed=seed, out=args.out, size_generic=args.size_generic,
          size_domain=args.size_domain, size_valid=args.size_valid, size_dev=args.size_dev,
          size_test=args.size_test)
    paths = experiment.make_toy_corpora(args.out, seed, args.size_generic, args.size_domain,
                                        args.size_valid, args.size_dev, args.size_test)
    for name, p in paths.items():
        print(f"{name}\t{p}\t{json.dumps(data.class_histogram(data.load_corpus(p)))}")
    return EXIT_OK


def cmd_prepare_data(args) -> int:
    _echo("prepare-data", corpus=args.corpus, out=args.out)
    corpus = [ex.classified() for ex in data.load_corpus(args.corpus)]
    data.save_corpus(corpus, args.out)
    print(json.dumps(data.class_histogram(corpus)))
    return EXIT_OK


def cmd_train(args) -> int:
    exp = experiment.load_experiment(args.experiment)
    if args.seed is not None:
        exp.seed = args.seed
    if args.out:
        exp.output_dir = Path(args.out)
    plans = [args.plan] if args.plan else exp.plans
    variants = [args.variant] if args.variant else exp.variants
    _echo("train", **{**exp.to_json(), "plans": plans, "variants": variants,
                      "evaluate": args.evaluate})
    states, _ = experiment.train_models(exp, plans, variants)
    for tag in states:
        print(exp.output_dir / tag / "final")
    if args.evaluate:
        reports, _ = experiment.evaluate_models(exp, states)
        print(evaluation.comparison_table(reports))
    return EXIT_OK


def cmd_translate(args) -> int:
    state = model.load_model(args.checkpoint, args.variant)
    verb = _verbosity(args.verbosity)
    params = decode.SearchParams(beam_size=args.beam, alpha_lp=args.alpha_lp, beta_cp=args.beta_cp,
                                 max_steps=args.max_steps, nbest=args.nbest or args.beam)
    _echo("translate", checkpoint=args.checkpoint, variant=state.config.variant.value,
          verbosity=verb.value if verb else None, search=params.to_json(), out=args.out)
    sources = _read_sources(args.input)
    lists = _pmap(lambda item: decode.beam_search(state, item[1], verb, params, item[0]),
                  list(enumerate(sources)))
    decode.write_nbest(lists, args.out)
    return EXIT_OK


def cmd_truncate_translate(args) -> int:
    state = model.load_model(args.checkpoint, args.variant)
    verb = _verbosity(args.verbosity)
    _echo("truncate-translate", checkpoint=args.checkpoint, verbosity=verb.value if verb else None,
          budget=args.budget, budget_scale=args.budget_scale, out=args.out)
    sources = _read_sources(args.input)

    def run(src):
        budget = args.budget if args.budget is not None else int(args.budget_scale * data.char_length(src))
        return decode.truncate_decode(state, src, verb, budget).text

    hyps = _pmap(run, sources)
    with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
        fh.writelines(h + "\n" for h in hyps)
    return EXIT_OK


def cmd_rescore(args) -> int:
    if (args.alpha is None) == (args.alpha_sweep is None):
        raise UsageError("rescore: give exactly one of --alpha or --alpha-sweep")
    lists = decode.read_nbest(args.input)
    base = rescore.RescoreParams(alpha=args.alpha if args.alpha is not None else 0.0,
                                 scorer=args.scorer, direction=args.direction,
                                 normalize_logprob=args.normalize_logprob)
    if args.alpha is not None:
        _echo("rescore", input=args.input, params=base.to_json(), out=args.out)
        decode.write_nbest([rescore.rescore(nb, base) for nb in lists], args.out)
        return EXIT_OK
    alphas = rescore.parse_sweep(args.alpha_sweep)
    _echo("rescore", input=args.input, params=base.to_json(), sweep=alphas, refs=args.refs, out=args.out)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    refs = _read_refs(args.refs) if args.refs else None
    curve = []
    for a in alphas:
        p = rescore.RescoreParams(a, base.scorer, base.direction, base.normalize_logprob)
        reranked = [rescore.rescore(nb, p) for nb in lists]
        decode.write_nbest(reranked, out / f"alpha_{a:.4f}.jsonl")
        best = [nb.best().text for nb in reranked]
        pct, ratios = evaluation.lr_compliance([(nb.source, h) for nb, h in zip(lists, best)])
        row = {"alpha": a, "compliance_pct": pct, "mean_lr": sum(ratios) / len(ratios)}
        if refs is not None:
            row["bleu"] = evaluation.bleu(best, refs)
        curve.append(row)
        print("\t".join(f"{k}={v:.4f}" for k, v in row.items()))
    (out / "curve.json").write_text(json.dumps(curve, indent=1) + "\n")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    hyps = _read_hyps(args.hyps)
    refs = _read_refs(args.refs)
    sources = _read_sources(args.sources)
    echo = json.loads(Path(args.config).read_text()) if args.config else {}
    _echo("evaluate", hyps=args.hyps, refs=args.refs, sources=args.sources, system=args.system,
          out=args.out)
    rep = evaluation.build_report(hyps, refs, sources, echo, args.system)
    if args.out:
        rep.save(args.out)
    if args.csv:
        evaluation.write_ratios_csv(sources, hyps, args.csv)
    print(evaluation.comparison_table([rep]))
    return EXIT_OK


def cmd_report(args) -> int:
    _echo("report", reports=args.reports, out=args.out)
    reports = []
    for p in args.reports:
        obj = json.loads(Path(p).read_text(encoding="utf-8"))
        items = obj if isinstance(obj, list) else [obj]
        reports += [evaluation.EvalReport.from_json(o) for o in items]
    table = evaluation.comparison_table(reports)
    print(table)
    if args.out:
        Path(args.out).write_text(table + "\n", encoding="utf-8")
    return EXIT_OK


# -- parser -----------------------------------------------------------------------------

def _add_decode_args(p, beam: int = 5) -> None:
    p.add_argument("--checkpoint", required=True, help="checkpoint directory")
    p.add_argument("--input", required=True, help="sources: text file (one per line) or corpus TSV")
    p.add_argument("--verbosity", choices=["short", "normal", "long"], type=str.lower)
    p.add_argument("--variant", help="fail unless the checkpoint has this variant")
    p.add_argument("--seed", type=int, help="accepted for uniformity; decoding is deterministic")
    p.add_argument("--out", required=True)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="isochron", description="Verbosity-controlled toy NMT toolkit.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("make-toy", help="generate synthetic corpora")
    p.add_argument("--spec", help="SyntheticSpec JSON; writes a single corpus to --out")
    p.add_argument("--out", required=True, help="output directory (or TSV file with --spec)")
    p.add_argument("--seed", type=int)
    p.add_argument("--size-generic", type=int, default=3000)
    p.add_argument("--size-domain", type=int, default=3000)
    p.add_argument("--size-valid", type=int, default=200)
    p.add_argument("--size-dev", type=int, default=200)
    p.add_argument("--size-test", type=int, default=300)
    p.set_defaults(func=cmd_make_toy)

    p = sub.add_parser("prepare-data", help="classify verbosity and write a 3-column TSV")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_prepare_data)

    p = sub.add_parser("train", help="run a stage plan from an experiment file")
    p.add_argument("--experiment", required=True)
    p.add_argument("--plan", choices=["single-stage", "two-stage"])
    p.add_argument("--variant", choices=[v.value for v in model.Variant])
    p.add_argument("--evaluate", action="store_true",
                   help="also decode, rescore and write reports plus comparison.txt")
    p.add_argument("--seed", type=int, help="override the experiment's root seed")
    p.add_argument("--out", help="override the experiment's output directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("translate", help="beam search to N-best JSON Lines")
    _add_decode_args(p)
    p.add_argument("--beam", type=int, default=5)
    p.add_argument("--nbest", type=int)
    p.add_argument("--alpha-lp", type=float, default=0.0)
    p.add_argument("--beta-cp", type=float, default=0.0)
    p.add_argument("--max-steps", type=int)
    p.set_defaults(func=cmd_translate)

    p = sub.add_parser("truncate-translate", help="greedy decoding capped at a character budget")
    _add_decode_args(p)
    g = p.add_mutually_exclusive_group()
    g.add_argument("--budget", type=int, help="fixed character budget")
    g.add_argument("--budget-scale", type=float, default=1.0,
                   help="budget as a multiple of the source length (default 1.0)")
    p.set_defaults(func=cmd_truncate_translate)

    p = sub.add_parser("rescore", help="rerank N-best lists with a synchrony score")
    p.add_argument("--input", required=True)
    p.add_argument("--alpha", type=float)
    p.add_argument("--alpha-sweep", help="start:stop:step; --out is then a directory")
    p.add_argument("--scorer", choices=["diff", "ratio"], default="ratio")
    p.add_argument("--direction", choices=["shorten", "lengthen"], default="shorten")
    p.add_argument("--normalize-logprob", action="store_true")
    p.add_argument("--refs", help="references (text lines or corpus TSV), to add BLEU to a sweep curve")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_rescore)

    p = sub.add_parser("evaluate", help="BLEU and length-ratio compliance report")
    p.add_argument("--hyps", required=True, help="hypotheses (text lines or N-best JSONL)")
    p.add_argument("--refs", required=True, help="text lines or corpus TSV (target column)")
    p.add_argument("--sources", required=True)
    p.add_argument("--system", default="system")
    p.add_argument("--config", help="JSON file echoed into the report")
    p.add_argument("--csv", help="write per-sentence length ratios here")
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("report", help="merge reports into a comparison table")
    p.add_argument("reports", nargs="+")
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)
    return parser


def run(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as err:
        print(err, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        return args.func(args)
    except UsageError as err:
        print(err, file=sys.stderr)
        return EXIT_USAGE
    except (data.DataError, experiment.ExperimentError, model.ModelError, decode.SearchError,
            rescore.RescoreError, evaluation.EvalError, train.TrainError, OSError) as err:
        print(f"isochron {args.command}: {err}", file=sys.stderr)
        return EXIT_DATA
    except Exception as err:  # noqa: BLE001
        log.exception("runtime failure")
        print(f"isochron {args.command}: runtime failure: {err}", file=sys.stderr)
        return EXIT_RUNTIME


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
