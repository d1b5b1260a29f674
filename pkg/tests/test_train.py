import numpy as np
import pytest

from isochron import data, model, train
from isochron.data import ParallelExample, Verbosity
from isochron.model import Variant
from isochron.train import Stage, StagePlan, TrainConfig
from helpers import random_text, tiny_model


def corpus(n=24, seed=0):
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        s = random_text(rng, 3, 6)
        out.append(ParallelExample(i, s, s[: max(1, len(s) - i % 3)]))
    return out


def test_lr_schedule_examples():
    cfg = TrainConfig(peak_lr=1e-3, warmup_steps=400)
    assert train.lr_schedule(400, cfg) == pytest.approx(1e-3, abs=1e-15)
    assert train.lr_schedule(200, cfg) == pytest.approx(5e-4, abs=1e-15)
    assert train.lr_schedule(1600, cfg) == pytest.approx(5e-4, abs=1e-15)


def test_adam_single_step_matches_hand_update():
    cfg = TrainConfig(peak_lr=0.1, warmup_steps=1, clip_norm=100.0)
    p = model.Tensor(np.array([1.0, -2.0], dtype=np.float32), requires_grad=True)
    p.grad = np.array([0.5, -0.25], dtype=np.float32)
    opt = train.Adam(cfg)
    opt.step({"p": p})
    m = 0.1 * p.grad / (1 - 0.9)
    v = 0.02 * p.grad ** 2 / (1 - 0.98)
    expected = np.array([1.0, -2.0]) - 0.1 * m / (np.sqrt(v) + 1e-9)
    np.testing.assert_allclose(p.data, expected, rtol=1e-6)


def test_adam_clips_global_norm():
    cfg = TrainConfig(peak_lr=1.0, warmup_steps=1, clip_norm=1.0)
    a = model.Tensor(np.zeros(2, dtype=np.float32), requires_grad=True)
    a.grad = np.array([30.0, 40.0], dtype=np.float32)
    opt = train.Adam(cfg)
    opt.step({"a": a})
    # first Adam step moves each coordinate by ~lr * sign(g) regardless of scale
    np.testing.assert_allclose(np.abs(a.data), 1.0, rtol=1e-5)
    assert opt.last_grad_norm == pytest.approx(50.0)


def test_train_stage_deterministic_and_learns():
    def run():
        st = tiny_model(seed=3)
        cfg = TrainConfig(peak_lr=3e-3, warmup_steps=5, batch_size=4, max_epochs=4, seed=11)
        st, log, cks, _ = train.train_stage(st, corpus(), cfg, False, corpus(8, seed=1))
        return st, log, cks
    a, la, ca = run()
    b, lb, cb = run()
    assert la.step_losses == lb.step_losses
    assert all(a[k].data.tobytes() == b[k].data.tobytes() for k in a.params)
    assert la.epoch_train_losses[-1] < la.epoch_train_losses[0]
    assert len(ca) == 4 and all(c.val_loss is not None for c in ca)


def test_tagging_consistency_errors():
    with pytest.raises(train.TrainError):
        train.train_stage(tiny_model("Standard"), corpus(), TrainConfig(max_epochs=1), True)
    with pytest.raises(train.TrainError):
        train.train_stage(tiny_model("EncTok"), corpus(), TrainConfig(max_epochs=1), False)


def test_tag_corpus_auto_classifies():
    pairs = train.tag_corpus(corpus(), tiny_model().vocab, Variant.ENC_TOK, True)
    assert all(p.source_ids[0] in data.VERBOSITY_IDS for p in pairs)
    assert all(p.verbosity is not None for p in pairs)


def _ck(epoch, loss):
    return train.Checkpoint(epoch, None, loss)


def test_select_checkpoint():
    assert train.select_checkpoint([_ck(1, 2.0), _ck(2, 1.5), _ck(3, 1.7)]).epoch == 2
    assert train.select_checkpoint([_ck(1, 1.5), _ck(2, 1.5)]).epoch == 1
    assert train.select_checkpoint([_ck(1, 9.0)]).epoch == 1
    assert train.select_checkpoint([_ck(1, None), _ck(2, None)]).epoch == 2
    with pytest.raises(train.TrainError):
        train.select_checkpoint([])


def test_plan_validation():
    with pytest.raises(train.TrainError):
        StagePlan([], Variant.ENC_TOK).validate()
    with pytest.raises(train.TrainError):
        StagePlan([Stage("x", "c", True, TrainConfig())], Variant.STANDARD).validate()


def test_plans_shape_and_seeds():
    cfg = TrainConfig(max_epochs=1)
    one = train.single_stage_plan("g", "d", "v", "EncTok", cfg, cfg, seed=5)
    two = train.two_stage_plan("g", "d", "v", "EncTok", cfg, cfg, seed=5)
    assert [s.name for s in one.stages] == ["pretrain", "finetune-domain"]
    assert [(s.corpus, s.tagging) for s in two.stages] == [("g", False), ("g", True), ("d", True)]
    assert len({s.config.seed for s in two.stages}) == 3
    assert one.stages[0].config.seed == two.stages[0].config.seed
    std = train.two_stage_plan("g", "d", "v", "Standard", cfg, cfg)
    assert not any(s.tagging for s in std.stages)


def test_run_plan_missing_corpus_fails_before_training(tmp_path):
    cfg = TrainConfig(max_epochs=1)
    plan = train.single_stage_plan(str(tmp_path / "nope.tsv"), "also-missing", None, "EncTok", cfg, cfg)
    st = tiny_model("EncTok")
    before = st["emb"].data.copy()
    with pytest.raises(train.TrainError, match="not found"):
        train.run_plan(plan, st, corpora={})
    np.testing.assert_array_equal(st["emb"].data, before)


def test_run_plan_two_stage_end_to_end(tmp_path):
    cfg = TrainConfig(max_epochs=2, batch_size=8, warmup_steps=3)
    corpora = {"g": corpus(16), "d": corpus(16, seed=2), "v": corpus(6, seed=3)}
    plan = train.two_stage_plan("g", "d", "v", "EncTok", cfg, cfg, seed=1)
    st, logs = train.run_plan(plan, tiny_model("EncTok"), corpora=corpora, out_dir=tmp_path)
    assert st.config.variant is Variant.ENC_TOK
    assert [lg.stage for lg in logs] == ["pretrain", "finetune-generic", "finetune-domain"]
    assert (tmp_path / "final" / "weights.bin").exists()
    assert (tmp_path / "train_log.json").exists()
    assert (tmp_path / "stage3-finetune-domain" / "epoch002" / "config.json").exists()
    back = model.load_model(tmp_path / "final", "EncTok")
    assert all(back[k].data.tobytes() == st[k].data.tobytes() for k in st.params)


def test_train_config_from_json():
    assert train.TrainConfig.from_json({"peak_lr": 0.01}).peak_lr == 0.01
    with pytest.raises((TypeError, ValueError)):
        train.TrainConfig.from_json({"learning_rate": 1})
