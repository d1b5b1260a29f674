"""Adam, warmup/inverse-sqrt schedule, epoch training loop and multi-stage fine-tuning plans."""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import numcore as nc
from .data import ParallelExample, TaggedPair, Vocabulary, classify_verbosity, load_corpus, tag_example
from .model import ModelConfig, ModelState, Variant, forward_loss, init_model, save_model

log = logging.getLogger(__name__)


class TrainError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    peak_lr: float = 3e-3
    warmup_steps: int = 400
    batch_size: int = 64
    max_epochs: int = 20
    beta1: float = 0.9
    beta2: float = 0.98
    adam_eps: float = 1e-9
    clip_norm: float | None = 1.0
    seed: int = 0
    reset_optimizer_on_finetune: bool = True

    def __post_init__(self):
        if self.warmup_steps < 1:
            raise TrainError("warmup_steps must be >= 1")
        if self.peak_lr <= 0:
            raise TrainError("peak_lr must be positive")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise TrainError("batch_size and max_epochs must be >= 1")

    @classmethod
    def from_json(cls, obj: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise TrainError(f"unknown training options: {sorted(unknown)}")
        return cls(**obj)


def lr_schedule(step: int, cfg: TrainConfig) -> float:
    """Linear warmup to ``peak_lr`` at ``warmup_steps``, then inverse square-root decay."""
    if step < 1:
        raise TrainError("step counts from 1")
    return cfg.peak_lr * min(step / cfg.warmup_steps, math.sqrt(cfg.warmup_steps / step))


class Adam:
    def __init__(self, cfg: TrainConfig):
        self.cfg = cfg
        self.step_count = 0
        self.last_grad_norm = 0.0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, nc.Tensor]) -> float:
        """Apply one update from the populated ``.grad`` fields; returns the lr used."""
        self.step_count += 1
        t = self.step_count
        lr = lr_schedule(t, self.cfg)
        b1, b2 = self.cfg.beta1, self.cfg.beta2
        grads = {k: p.grad for k, p in params.items() if p.grad is not None}
        if self.cfg.clip_norm:
            norm = math.sqrt(sum(float(np.dot(g.reshape(-1).astype(np.float64), g.reshape(-1)))
                                 for g in grads.values()))
            self.last_grad_norm = norm
            if norm > self.cfg.clip_norm:
                factor = np.float32(self.cfg.clip_norm / norm)
                grads = {k: g * factor for k, g in grads.items()}
        c1, c2 = 1.0 - b1 ** t, 1.0 - b2 ** t
        for name, g in grads.items():
            p = params[name]
            if name not in self.m:
                self.m[name] = np.zeros_like(p.data)
                self.v[name] = np.zeros_like(p.data)
            m, v = self.m[name], self.v[name]
            m *= np.float32(b1)
            m += np.float32(1.0 - b1) * g
            v *= np.float32(b2)
            v += np.float32(1.0 - b2) * (g * g)
            update = (lr / c1) * m / (np.sqrt(v / np.float32(c2)) + np.float32(self.cfg.adam_eps))
            p.data = (p.data - update).astype(np.float32)
        return lr


@dataclass
class TrainLog:
    stage: str
    seed: int
    step_losses: list[float] = field(default_factory=list)
    learning_rates: list[float] = field(default_factory=list)
    epoch_val_losses: list[float] = field(default_factory=list)
    epoch_train_losses: list[float] = field(default_factory=list)
    selected_epoch: int | None = None
    wall_clock_s: float = 0.0

    def to_json(self) -> dict:
        return asdict(self)


@dataclass
class Checkpoint:
    epoch: int
    state: ModelState
    val_loss: float | None = None
    path: Path | None = None


def tag_corpus(corpus: Sequence[ParallelExample], vocab: Vocabulary, variant: Variant,
               tagging: bool) -> list[TaggedPair]:
    if tagging and not variant.conditioned:
        raise TrainError("tagged training needs a verbosity-conditioned variant, got Standard")
    if not tagging and variant.conditioned:
        raise TrainError(f"variant {variant.value} cannot train on untagged data")
    pairs = []
    for ex in corpus:
        if tagging:
            if ex.verbosity is None:
                ex = ParallelExample(ex.id, ex.source, ex.target, classify_verbosity(ex.source, ex.target))
            pairs.append(tag_example(ex, vocab, "prepend" if variant.prepends else "none"))
        else:
            p = tag_example(ex, vocab, "none")
            pairs.append(TaggedPair(p.source_ids, p.target_ids, None))
    return pairs


def corpus_loss(state: ModelState, pairs: Sequence[TaggedPair], batch_size: int = 128) -> float:
    """Token-weighted mean cross entropy in evaluation mode."""
    total, count = 0.0, 0
    with nc.no_grad():
        for i in range(0, len(pairs), batch_size):
            chunk = pairs[i:i + batch_size]
            n = sum(len(p.target_ids) + 1 for p in chunk)
            total += float(forward_loss(chunk, state, False).item()) * n
            count += n
    return total / max(count, 1)


def train_stage(state: ModelState, corpus: Sequence[ParallelExample], cfg: TrainConfig,
                tagging: bool, valid: Sequence[ParallelExample] | None = None,
                optimizer: Adam | None = None, checkpoint_dir: str | Path | None = None,
                name: str = "stage") -> tuple[ModelState, TrainLog, list[Checkpoint], Adam]:
    """Train ``state`` in place for ``cfg.max_epochs`` epochs, snapshotting every epoch."""
    variant = state.config.variant
    pairs = tag_corpus(corpus, state.vocab, variant, tagging)
    val_pairs = tag_corpus(valid, state.vocab, variant, tagging) if valid else None
    opt = optimizer or Adam(cfg)
    opt.cfg = cfg
    rng = np.random.default_rng(cfg.seed)
    tlog = TrainLog(name, cfg.seed)
    checkpoints = []
    start = time.perf_counter()
    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(len(pairs))
        losses = []
        for b in range(0, len(order), cfg.batch_size):
            batch = [pairs[i] for i in order[b:b + cfg.batch_size]]
            state.zero_grad()
            with nc.Graph() as graph:
                loss = forward_loss(batch, state, True, rng)
            nc.backward(graph, loss)
            lr = opt.step(state.params)
            tlog.step_losses.append(float(loss.item()))
            tlog.learning_rates.append(lr)
            losses.append(float(loss.item()))
        state.zero_grad()
        tlog.epoch_train_losses.append(float(np.mean(losses)))
        ck = Checkpoint(epoch, state.copy())
        if val_pairs:
            ck.val_loss = corpus_loss(state, val_pairs)
            tlog.epoch_val_losses.append(ck.val_loss)
        if checkpoint_dir is not None:
            ck.path = Path(checkpoint_dir) / f"epoch{epoch:03d}"
            save_model(state, ck.path)
        checkpoints.append(ck)
        log.info("%s epoch %d train %.4f val %s", name, epoch, tlog.epoch_train_losses[-1],
                 f"{ck.val_loss:.4f}" if ck.val_loss is not None else "-")
    tlog.wall_clock_s = time.perf_counter() - start
    return state, tlog, checkpoints, opt


def select_checkpoint(checkpoints: Sequence[Checkpoint],
                      valid: Sequence[ParallelExample] | None = None,
                      tagging: bool | None = None) -> Checkpoint:
    """Lowest validation loss, earliest epoch on ties.

    Losses already attached to the checkpoints are used; otherwise they are
    computed on ``valid``. Without either, the last checkpoint is returned.
    """
    if not checkpoints:
        raise TrainError("no checkpoints to select from")
    if any(c.val_loss is None for c in checkpoints):
        if valid is None:
            return checkpoints[-1]
        for c in checkpoints:
            variant = c.state.config.variant
            use_tags = variant.conditioned if tagging is None else tagging
            c.val_loss = corpus_loss(c.state, tag_corpus(valid, c.state.vocab, variant, use_tags))
    return min(checkpoints, key=lambda c: (c.val_loss, c.epoch))


# -- multi-stage plans -------------------------------------------------------------

@dataclass
class Stage:
    name: str
    corpus: str
    tagging: bool
    config: TrainConfig
    valid: str | None = None


@dataclass
class StagePlan:
    stages: list[Stage]
    variant: Variant = Variant.ENC_TOK

    def validate(self) -> None:
        if not self.stages:
            raise TrainError("a stage plan needs at least one stage")
        for st in self.stages:
            if st.tagging and not Variant(self.variant).conditioned:
                raise TrainError(f"stage {st.name!r} is tagged but the plan variant is Standard")

    def to_json(self) -> dict:
        return {"variant": Variant(self.variant).value,
                "stages": [{"name": s.name, "corpus": s.corpus, "tagging": s.tagging,
                            "valid": s.valid, "config": asdict(s.config)} for s in self.stages]}


def stage_seed(root: int, index: int) -> int:
    return int(np.random.SeedSequence([root, index]).generate_state(1)[0])


def single_stage_plan(generic: str, in_domain: str, valid: str | None, variant: Variant | str,
                      pretrain: TrainConfig, finetune: TrainConfig, seed: int = 0) -> StagePlan:
    """Pretrain on untagged generic data, fine-tune on in-domain data (tagged if conditioned)."""
    tagged = Variant(variant).conditioned
    return StagePlan([
        Stage("pretrain", generic, False, _seeded(pretrain, seed, 0), None),
        Stage("finetune-domain", in_domain, tagged, _seeded(finetune, seed, 1), valid),
    ], Variant(variant))


def two_stage_plan(generic: str, in_domain: str, valid: str | None, variant: Variant | str,
                   pretrain: TrainConfig, finetune: TrainConfig, seed: int = 0,
                   generic_valid: str | None = None) -> StagePlan:
    """Pretrain; fine-tune with tags on generic data; fine-tune again with tags in-domain."""
    tagged = Variant(variant).conditioned
    return StagePlan([
        Stage("pretrain", generic, False, _seeded(pretrain, seed, 0), None),
        Stage("finetune-generic", generic, tagged, _seeded(finetune, seed, 1), generic_valid),
        Stage("finetune-domain", in_domain, tagged, _seeded(finetune, seed, 2), valid),
    ], Variant(variant))


def _seeded(cfg: TrainConfig, root: int, index: int) -> TrainConfig:
    return replace(cfg, seed=stage_seed(root, index))


def run_plan(plan: StagePlan, init: ModelState | None = None,
             model_config: ModelConfig | None = None, vocab: Vocabulary | None = None,
             corpora: dict[str, Sequence[ParallelExample]] | None = None,
             out_dir: str | Path | None = None) -> tuple[ModelState, list[TrainLog]]:
    """Execute every stage in order and return the selected final model and per-stage logs.

    Untagged stages train the shared weights as a Standard model; tagged stages
    use the plan's variant. Corpora are given by path, or by key into ``corpora``.
    """
    plan.validate()
    corpora = dict(corpora or {})
    for st in plan.stages:
        for ref in filter(None, (st.corpus, st.valid)):
            if ref not in corpora and not Path(ref).is_file():
                raise TrainError(f"stage {st.name!r}: corpus {ref!r} not found")
    for st in plan.stages:
        for ref in filter(None, (st.corpus, st.valid)):
            if ref not in corpora:
                corpora[ref] = load_corpus(ref)
    if init is None:
        if model_config is None or vocab is None:
            raise TrainError("run_plan needs either an initial state or a model config and vocabulary")
        init = init_model(model_config, vocab)
    state = init
    final_variant = Variant(plan.variant)
    logs, opt = [], None
    for i, st in enumerate(plan.stages):
        variant = final_variant if st.tagging else Variant.STANDARD
        state = state.with_variant(variant)
        if opt is None or st.config.reset_optimizer_on_finetune:
            opt = None
        ck_dir = Path(out_dir) / f"stage{i + 1}-{st.name}" if out_dir else None
        valid = corpora[st.valid] if st.valid else None
        state, tlog, cks, opt = train_stage(state, corpora[st.corpus], st.config, st.tagging,
                                            valid, opt, ck_dir, st.name)
        best = select_checkpoint(cks)
        tlog.selected_epoch = best.epoch
        state = best.state.copy()
        logs.append(tlog)
    state = state.with_variant(final_variant)
    if out_dir:
        out = Path(out_dir)
        save_model(state, out / "final")
        (out / "train_log.json").write_text(json.dumps([lg.to_json() for lg in logs], indent=1) + "\n")
    return state, logs
