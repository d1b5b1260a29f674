"""Declarative experiment files and the end-to-end train/translate/rescore/evaluate pipeline."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

from .data import (ParallelExample, Verbosity, Vocabulary, load_corpus, make_synthetic_corpus,
                   save_corpus, toy_specs)
from .decode import NBestList, SearchParams, beam_search, write_nbest
from .evaluation import EvalReport, bleu, build_report, comparison_table, lr_compliance
from .model import ModelConfig, ModelState, Variant, init_model, save_model
from .rescore import RescoreParams, alpha_grid, rescore
from .train import (StagePlan, TrainConfig, TrainError, TrainLog, run_plan, single_stage_plan,
                    stage_seed, two_stage_plan)

log = logging.getLogger(__name__)

CORPUS_KEYS = ("generic", "in_domain", "validation", "dev", "test")


class ExperimentError(ValueError):
    def __init__(self, problems: Sequence[str]):
        self.problems = list(problems)
        super().__init__("invalid experiment file:\n  - " + "\n  - ".join(self.problems))


@dataclass
class Experiment:
    seed: int
    output_dir: Path
    corpora: dict[str, str]
    model: dict = field(default_factory=dict)
    plans: list[str] = field(default_factory=lambda: ["single-stage", "two-stage"])
    variants: list[str] = field(default_factory=lambda: ["Standard", "EncTok"])
    pretrain: TrainConfig = field(default_factory=lambda: TrainConfig(max_epochs=10))
    finetune: TrainConfig = field(default_factory=TrainConfig)
    search: SearchParams = field(default_factory=SearchParams)
    rescore_beam: int = 50
    rescore: RescoreParams = field(default_factory=RescoreParams)
    alpha_sweep: list[float] = field(default_factory=lambda: alpha_grid(0.0, 1.0, 0.05))
    eval_verbosity: Verbosity = Verbosity.NORMAL
    max_bleu_drop: float = 5.0

    def to_json(self) -> dict:
        return {
            "seed": self.seed, "output_dir": str(self.output_dir), "corpora": self.corpora,
            "model": self.model, "plans": self.plans, "variants": self.variants,
            "pretrain": vars(self.pretrain), "finetune": vars(self.finetune),
            "search": self.search.to_json(), "rescore_beam": self.rescore_beam,
            "rescore": self.rescore.to_json(), "alpha_sweep": self.alpha_sweep,
            "eval_verbosity": self.eval_verbosity.value, "max_bleu_drop": self.max_bleu_drop,
        }


def _resolve(base: Path, p: str) -> str:
    q = Path(p)
    return str(q if q.is_absolute() else base / q)


def parse_experiment(obj: dict, base_dir: str | Path = ".") -> Experiment:
    """Validate an experiment document, collecting every problem before failing."""
    base = Path(base_dir)
    problems = []
    known = {"seed", "output_dir", "corpora", "model", "plans", "variants", "pretrain", "finetune",
             "search", "rescore_beam", "rescore", "alpha_sweep", "eval_verbosity", "max_bleu_drop"}
    for k in sorted(set(obj) - known):
        problems.append(f"unknown key {k!r}")
    seed = obj.get("seed", 0)
    if not isinstance(seed, int):
        problems.append("seed must be an integer")
        seed = 0
    corpora = obj.get("corpora")
    if not isinstance(corpora, dict):
        problems.append("corpora must map names to TSV paths")
        corpora = {}
    corpora = {k: _resolve(base, v) for k, v in corpora.items() if isinstance(v, str)}
    for key in CORPUS_KEYS:
        if key not in corpora:
            problems.append(f"corpora.{key} is required")
        elif not Path(corpora[key]).is_file():
            problems.append(f"corpora.{key}: file {corpora[key]} does not exist")
    model = obj.get("model", {})
    if not isinstance(model, dict) or "vocab_size" in model or "variant" in model:
        problems.append("model must be an object without vocab_size/variant (both are derived)")
        model = {}
    else:
        try:
            ModelConfig(vocab_size=8, **{**model, "seed": seed})
        except (TypeError, ValueError) as err:
            problems.append(f"model: {err}")
    plans = obj.get("plans", ["single-stage", "two-stage"])
    for p in plans:
        if p not in ("single-stage", "two-stage"):
            problems.append(f"plans: unknown plan {p!r}")
    variants = obj.get("variants", ["Standard", "EncTok"])
    for v in variants:
        try:
            Variant(v)
        except ValueError:
            problems.append(f"variants: unknown variant {v!r}")
    cfgs = {}
    for key, default_epochs in (("pretrain", 10), ("finetune", 20)):
        raw = obj.get(key, {})
        try:
            cfgs[key] = TrainConfig.from_json({"max_epochs": default_epochs, **raw})
        except (TypeError, ValueError) as err:
            problems.append(f"{key}: {err}")
    try:
        search = SearchParams(**obj.get("search", {}))
    except (TypeError, ValueError) as err:
        problems.append(f"search: {err}")
        search = SearchParams()
    try:
        rparams = RescoreParams(**obj.get("rescore", {}))
    except (TypeError, ValueError) as err:
        problems.append(f"rescore: {err}")
        rparams = RescoreParams()
    sweep = obj.get("alpha_sweep", "0:1:0.05")
    try:
        alphas = alpha_grid(*(float(x) for x in sweep.split(":"))) if isinstance(sweep, str) else \
            [float(a) for a in sweep]
        if any(not 0 <= a <= 1 for a in alphas):
            raise ValueError("alphas must lie in [0, 1]")
    except (TypeError, ValueError) as err:
        problems.append(f"alpha_sweep: {err}")
        alphas = []
    rescore_beam = obj.get("rescore_beam", 50)
    if not isinstance(rescore_beam, int) or rescore_beam < 1:
        problems.append("rescore_beam must be a positive integer")
    try:
        verbosity = Verbosity.parse(obj.get("eval_verbosity", "Normal"))
    except ValueError as err:
        problems.append(str(err))
        verbosity = Verbosity.NORMAL
    if "output_dir" not in obj:
        problems.append("output_dir is required")
    if problems:
        raise ExperimentError(problems)
    return Experiment(seed, Path(_resolve(base, obj["output_dir"])), corpora, model, list(plans),
                      list(variants), cfgs["pretrain"], cfgs["finetune"], search, rescore_beam,
                      rparams, alphas, verbosity, float(obj.get("max_bleu_drop", 5.0)))


def load_experiment(path: str | Path) -> Experiment:
    path = Path(path)
    try:
        obj = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as err:
        raise ExperimentError([f"cannot read {path}: {err}"]) from None
    return parse_experiment(obj, path.parent)


# -- toy data ------------------------------------------------------------------------

def make_toy_corpora(out_dir: str | Path, seed: int = 0, size_generic: int = 3000,
                     size_domain: int = 3000, size_valid: int = 200, size_dev: int = 200,
                     size_test: int = 300) -> dict[str, str]:
    """Write generic / in-domain / validation / dev / test TSVs plus their specs.

    In-domain training data leans long (like translation out of English); dev
    and test references are all Normal, i.e. close to the source length.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    lean_long = {"Short": 0.2, "Normal": 0.3, "Long": 0.5}
    generic, domain = toy_specs(seed, size_generic, size_domain, domain_weights=lean_long)
    specs = {
        "generic": generic,
        "in_domain": domain,
        "validation": replace(domain, corpus_size=size_valid, seed=stage_seed(seed, 101)),
        "dev": replace(domain, corpus_size=size_dev, seed=stage_seed(seed, 102),
                       class_weights={"Short": 0.0, "Normal": 1.0, "Long": 0.0}),
        "test": replace(domain, corpus_size=size_test, seed=stage_seed(seed, 103),
                        class_weights={"Short": 0.0, "Normal": 1.0, "Long": 0.0}),
    }
    paths = {}
    for name, spec in specs.items():
        spec.save(out / f"{name}.spec.json")
        save_corpus(make_synthetic_corpus(spec), out / f"{name}.tsv")
        paths[name] = str(out / f"{name}.tsv")
    return paths


# -- pipeline -------------------------------------------------------------------------

def build_vocab(corpora: dict[str, Sequence[ParallelExample]]) -> Vocabulary:
    texts = []
    for key in ("generic", "in_domain", "validation"):
        for ex in corpora.get(key, []):
            texts += [ex.source, ex.target]
    for key in ("dev", "test"):
        texts += [ex.source for ex in corpora.get(key, [])]
    return Vocabulary.from_texts(texts)


def translate_corpus(state: ModelState, sources: Sequence[str], verbosity: Verbosity | None,
                     params: SearchParams) -> list[NBestList]:
    return [beam_search(state, s, verbosity, params, i) for i, s in enumerate(sources)]


def sweep_alpha(lists: Sequence[NBestList], references: Sequence[str], alphas: Sequence[float],
                params: RescoreParams) -> list[dict]:
    """BLEU and compliance of the rescored 1-best for each alpha."""
    curve = []
    sources = [nb.source for nb in lists]
    for a in alphas:
        p = replace(params, alpha=a)
        best = [rescore(nb, p).best().text for nb in lists]
        pct, _ = lr_compliance(list(zip(sources, best)))
        curve.append({"alpha": a, "bleu": bleu(best, references), "compliance_pct": pct})
    return curve


def pick_alpha(curve: Sequence[dict], baseline_bleu: float, max_bleu_drop: float) -> float:
    """Highest compliance among alphas within the BLEU budget; ties -> smaller alpha."""
    ok = [c for c in curve if c["bleu"] >= baseline_bleu - max_bleu_drop] or list(curve[:1])
    return max(ok, key=lambda c: (c["compliance_pct"], -c["alpha"]))["alpha"]


@dataclass
class PipelineResult:
    reports: list[EvalReport]
    curves: dict[str, list[dict]]
    logs: dict[str, list[TrainLog]]


def _plan(kind: str, exp: Experiment, variant: Variant) -> StagePlan:
    maker = single_stage_plan if kind == "single-stage" else two_stage_plan
    kwargs = {"generic_valid": None} if kind == "two-stage" else {}
    return maker("generic", "in_domain", "validation", variant, exp.pretrain, exp.finetune,
                 exp.seed, **kwargs)


def _load(exp: Experiment):
    corpora = {k: load_corpus(exp.corpora[k]) for k in CORPUS_KEYS}
    vocab = build_vocab(corpora)
    cfg = ModelConfig(vocab_size=len(vocab), seed=exp.seed, **exp.model)
    return corpora, vocab, cfg


def train_models(exp: Experiment, plans: Sequence[str] | None = None,
                 variants: Sequence[str] | None = None) -> tuple[dict[str, ModelState], dict[str, list[TrainLog]]]:
    """Train every requested (plan, variant) under ``exp.output_dir/<plan>/<variant>``.

    The untagged pretraining stage is identical across plans, so it runs once and
    later stages start from a copy of its result.
    """
    plans = list(plans or exp.plans)
    variants = list(variants or exp.variants)
    corpora, vocab, cfg = _load(exp)
    out = exp.output_dir
    out.mkdir(parents=True, exist_ok=True)
    (out / "experiment.resolved.json").write_text(json.dumps(exp.to_json(), indent=1) + "\n")
    first = _plan(plans[0], exp, Variant.STANDARD).stages[0]
    pretrained, pre_logs = run_plan(StagePlan([first], Variant.STANDARD), init_model(cfg, vocab),
                                    corpora=corpora, out_dir=out / "pretrain")
    states, logs = {}, {"pretrain": pre_logs}
    for kind in plans:
        for vname in variants:
            variant = Variant(vname)
            plan = _plan(kind, exp, variant)
            tag = f"{kind}/{variant.value}"
            state, stage_logs = run_plan(StagePlan(plan.stages[1:], variant), pretrained.copy(),
                                         corpora=corpora, out_dir=out / kind / variant.value)
            states[tag] = state
            logs[tag] = pre_logs + stage_logs
    return states, logs


def evaluate_models(exp: Experiment, states: dict[str, ModelState]) -> tuple[list[EvalReport], dict]:
    """Beam decode test, pick alpha on dev with beam-B lists, rescore test and write reports."""
    corpora, _, _ = _load(exp)
    out = exp.output_dir
    test_src = [e.source for e in corpora["test"]]
    test_ref = [e.target for e in corpora["test"]]
    dev_src = [e.source for e in corpora["dev"]]
    dev_ref = [e.target for e in corpora["dev"]]
    reports, curves = [], {}
    for tag, state in states.items():
        kind = tag.split("/")[0]
        variant = state.config.variant
        run_dir = out / tag
        run_dir.mkdir(parents=True, exist_ok=True)
        verb = exp.eval_verbosity if variant.conditioned else None
        echo = {"plan": kind, "model": state.config.to_json(), "search": exp.search.to_json(),
                "verbosity": verb.value if verb else None, "seed": exp.seed}
        lists = translate_corpus(state, test_src, verb, exp.search)
        write_nbest(lists, run_dir / "test.beam.jsonl")
        rep = build_report([nb.best().text for nb in lists], test_ref, test_src, echo, tag)
        rep.save(run_dir / "test.report.json")
        reports.append(rep)

        # beam-B N-best, alpha chosen on dev, applied to test
        big = replace(exp.search, beam_size=exp.rescore_beam, nbest=exp.rescore_beam)
        dev_lists = translate_corpus(state, dev_src, verb, big)
        dev_base = bleu([nb.best().text for nb in translate_corpus(state, dev_src, verb, exp.search)],
                        dev_ref)
        curve = sweep_alpha(dev_lists, dev_ref, exp.alpha_sweep, exp.rescore)
        alpha = pick_alpha(curve, dev_base, exp.max_bleu_drop)
        curves[tag] = curve
        (run_dir / "alpha_curve.json").write_text(json.dumps(curve, indent=1) + "\n")
        test_lists = translate_corpus(state, test_src, verb, big)
        write_nbest(test_lists, run_dir / f"test.beam{exp.rescore_beam}.jsonl")
        rp = replace(exp.rescore, alpha=alpha)
        rescored = [rescore(nb, rp) for nb in test_lists]
        write_nbest(rescored, run_dir / "test.rescored.jsonl")
        name = f"{tag}+Rescore{exp.rescore.scorer.value.capitalize()}"
        rep = build_report([nb.best().text for nb in rescored], test_ref, test_src,
                           {**echo, "search": big.to_json(), "rescore": rp.to_json()}, name)
        rep.save(run_dir / "test.rescored.report.json")
        reports.append(rep)
    (out / "comparison.txt").write_text(comparison_table(reports) + "\n")
    (out / "comparison.json").write_text(
        json.dumps([r.to_json() for r in reports], indent=1, sort_keys=True) + "\n")
    return reports, curves


def run_pipeline(exp: Experiment) -> PipelineResult:
    """Train every (plan, variant), then decode, rescore and evaluate each."""
    states, logs = train_models(exp)
    reports, curves = evaluate_models(exp, states)
    return PipelineResult(reports, curves, logs)
