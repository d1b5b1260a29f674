import json
import subprocess
import sys

import pytest

from isochron import cli, data, decode
from isochron.decode import Hypothesis, NBestList

SUBCOMMANDS = ["make-toy", "prepare-data", "train", "translate", "truncate-translate", "rescore",
               "evaluate", "report"]

TINY = {"layers": 1, "model_dim": 16, "heads": 2, "ffn_dim": 32, "dropout_other": 0.1}


@pytest.fixture(scope="module")
def toy(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert cli.run(["make-toy", "--out", str(root / "data"), "--seed", "4", "--size-generic", "80",
                    "--size-domain", "80", "--size-valid", "16", "--size-dev", "8", "--size-test", "8"]) == 0
    exp = {"seed": 4, "output_dir": "runs", "model": TINY,
           "corpora": {k: f"data/{k}.tsv" for k in ("generic", "in_domain", "validation", "dev", "test")},
           "plans": ["two-stage"], "variants": ["EncTok"],
           "pretrain": {"max_epochs": 1, "batch_size": 16, "warmup_steps": 4},
           "finetune": {"max_epochs": 1, "batch_size": 16, "warmup_steps": 4},
           "rescore_beam": 3, "alpha_sweep": "0:1:0.5"}
    (root / "exp.json").write_text(json.dumps(exp))
    return root


@pytest.mark.parametrize("cmd", SUBCOMMANDS)
def test_help_for_every_subcommand(cmd, capsys):
    assert cli.run([cmd, "--help"]) == 0
    assert "usage:" in capsys.readouterr().out


def test_usage_errors_exit_1(capsys):
    assert cli.run([]) == 1
    assert cli.run(["translate", "--bogus"]) == 1
    assert cli.run(["frobnicate"]) == 1
    assert "usage" in capsys.readouterr().err


def test_console_script_entry_point():
    out = subprocess.run([sys.executable, "-m", "isochron.cli", "--help"], capture_output=True, text=True)
    assert out.returncode == 0 and "make-toy" in out.stdout
    bad = subprocess.run([sys.executable, "-m", "isochron.cli", "report"], capture_output=True, text=True)
    assert bad.returncode == 1


def test_evaluate_identical(tmp_path, capsys):
    lines = ["ab cd ef gh", "ij kl mn op qr"]
    for name in ("h.txt", "r.txt", "s.txt"):
        (tmp_path / name).write_text("\n".join(lines) + "\n")
    rc = cli.run(["evaluate", "--hyps", str(tmp_path / "h.txt"), "--refs", str(tmp_path / "r.txt"),
                  "--sources", str(tmp_path / "s.txt"), "--out", str(tmp_path / "rep.json")])
    assert rc == 0
    rep = json.loads((tmp_path / "rep.json").read_text())
    assert rep["bleu"] == pytest.approx(100.0) and rep["compliance_pct"] == 100.0
    err = capsys.readouterr().err
    assert '"command": "evaluate"' in err


def test_evaluate_reads_corpus_tsv(tmp_path):
    corpus = [data.ParallelExample(0, "ab cd ef gh", "ab cd ef gh"),
              data.ParallelExample(1, "ij kl mn op", "ij kl mn op qr")]
    data.save_corpus(corpus, tmp_path / "c.tsv")
    (tmp_path / "h.txt").write_text("ab cd ef gh\nij kl mn op qr\n")
    rc = cli.run(["evaluate", "--hyps", str(tmp_path / "h.txt"), "--refs", str(tmp_path / "c.tsv"),
                  "--sources", str(tmp_path / "c.tsv"), "--out", str(tmp_path / "rep.json")])
    assert rc == 0
    rep = json.loads((tmp_path / "rep.json").read_text())
    assert rep["bleu"] == pytest.approx(100.0) and rep["compliance_pct"] == 50.0


def test_evaluate_misaligned_is_data_error(tmp_path):
    (tmp_path / "a.txt").write_text("x y\n")
    (tmp_path / "b.txt").write_text("x y\nz\n")
    assert cli.run(["evaluate", "--hyps", str(tmp_path / "a.txt"), "--refs", str(tmp_path / "b.txt"),
                    "--sources", str(tmp_path / "b.txt")]) == 2


def _nbest_file(path):
    lists = [NBestList("abcdefghij", 10, [Hypothesis(None, "x" * n, lp, lp, n) for lp, n in
                                          [(-1.0, 14), (-1.5, 10), (-3.0, 6)]], 0)]
    decode.write_nbest(lists, path)


def test_rescore_alpha_zero_preserves_order(tmp_path):
    _nbest_file(tmp_path / "n.jsonl")
    assert cli.run(["rescore", "--input", str(tmp_path / "n.jsonl"), "--alpha", "0",
                    "--out", str(tmp_path / "r.jsonl")]) == 0
    back = decode.read_nbest(tmp_path / "r.jsonl")[0]
    assert [h.char_len for h in back.hypotheses] == [14, 10, 6]
    assert cli.run(["rescore", "--input", str(tmp_path / "n.jsonl"), "--alpha", "1",
                    "--out", str(tmp_path / "r1.jsonl")]) == 0
    assert decode.read_nbest(tmp_path / "r1.jsonl")[0].best().char_len == 6


def test_rescore_sweep_and_flag_conflicts(tmp_path):
    _nbest_file(tmp_path / "n.jsonl")
    (tmp_path / "refs.txt").write_text("xxxxxxxxxx\n")
    assert cli.run(["rescore", "--input", str(tmp_path / "n.jsonl"), "--alpha-sweep", "0:1:0.25",
                    "--refs", str(tmp_path / "refs.txt"), "--out", str(tmp_path / "sw")]) == 0
    curve = json.loads((tmp_path / "sw" / "curve.json").read_text())
    assert [c["alpha"] for c in curve] == [0.0, 0.25, 0.5, 0.75, 1.0]
    assert all("bleu" in c for c in curve)
    assert cli.run(["rescore", "--input", str(tmp_path / "n.jsonl"), "--out", str(tmp_path / "x")]) == 1
    assert cli.run(["rescore", "--input", str(tmp_path / "n.jsonl"), "--alpha", "2",
                    "--out", str(tmp_path / "x")]) == 2


def test_invalid_experiment_lists_every_problem(tmp_path, capsys):
    (tmp_path / "bad.json").write_text(json.dumps({"seed": "x", "corpora": {"generic": "nope.tsv"},
                                                   "variants": ["Huge"], "plans": ["three-stage"],
                                                   "colour": 1}))
    assert cli.run(["train", "--experiment", str(tmp_path / "bad.json")]) == 2
    err = capsys.readouterr().err
    for needle in ("seed must be an integer", "corpora.generic", "corpora.test is required",
                   "unknown variant 'Huge'", "unknown plan 'three-stage'", "unknown key 'colour'",
                   "output_dir is required"):
        assert needle in err


def test_prepare_data(tmp_path, capsys):
    (tmp_path / "c.tsv").write_text("abcd\tab\nab\tab\n")
    assert cli.run(["prepare-data", "--corpus", str(tmp_path / "c.tsv"), "--out", str(tmp_path / "o.tsv")]) == 0
    assert (tmp_path / "o.tsv").read_text() == "abcd\tab\tShort\nab\tab\tNormal\n"
    assert '"Short": 1' in capsys.readouterr().out
    (tmp_path / "bad.tsv").write_text("only one column\n")
    assert cli.run(["prepare-data", "--corpus", str(tmp_path / "bad.tsv"), "--out", str(tmp_path / "x")]) == 2


def test_make_toy_from_spec(tmp_path):
    from isochron.data import load_corpus, toy_specs
    g, _ = toy_specs(1, size_generic=12)
    g.save(tmp_path / "spec.json")
    assert cli.run(["make-toy", "--spec", str(tmp_path / "spec.json"), "--out", str(tmp_path / "c.tsv")]) == 0
    assert len(load_corpus(tmp_path / "c.tsv")) == 12


def test_pipeline_two_stage_translate_evaluate(toy, tmp_path, monkeypatch):
    monkeypatch.chdir(toy)
    assert cli.run(["train", "--experiment", "exp.json"]) == 0
    ck = "runs/two-stage/EncTok/final"
    src = str(toy / "data" / "test.tsv")
    assert cli.run(["translate", "--checkpoint", ck, "--input", src, "--verbosity", "normal",
                    "--beam", "3", "--alpha-lp", "0.5", "--out", str(tmp_path / "t.jsonl")]) == 0
    lists = decode.read_nbest(tmp_path / "t.jsonl")
    assert len(lists) == 8 and [nb.id for nb in lists] == list(range(8))
    refs = tmp_path / "refs.txt"
    refs.write_text("".join(line.split("\t")[1] + "\n" for line in open(src, encoding="utf-8")))
    assert cli.run(["evaluate", "--hyps", str(tmp_path / "t.jsonl"), "--refs", str(refs),
                    "--sources", src, "--out", str(tmp_path / "rep.json"), "--system", "EncTok"]) == 0
    assert json.loads((tmp_path / "rep.json").read_text())["sentences"] == 8
    assert cli.run(["truncate-translate", "--checkpoint", ck, "--input", src, "--verbosity", "long",
                    "--budget", "6", "--out", str(tmp_path / "tr.txt")]) == 0
    assert all(len(x) <= 6 for x in (tmp_path / "tr.txt").read_text().splitlines())
    assert cli.run(["report", str(tmp_path / "rep.json"), "--out", str(tmp_path / "table.txt")]) == 0
    assert "EncTok" in (tmp_path / "table.txt").read_text()
    # wrong variant requested -> data error
    assert cli.run(["translate", "--checkpoint", ck, "--input", src, "--variant", "Standard",
                    "--out", str(tmp_path / "x.jsonl")]) == 2


def test_translate_is_thread_count_independent(toy, tmp_path, monkeypatch):
    monkeypatch.chdir(toy)
    ck = "runs/two-stage/EncTok/final"
    if not (toy / ck).exists():
        assert cli.run(["train", "--experiment", "exp.json"]) == 0
    outs = []
    for threads in ("1", "3"):
        monkeypatch.setenv("ISOCHRON_THREADS", threads)
        out = tmp_path / f"t{threads}.jsonl"
        assert cli.run(["translate", "--checkpoint", ck, "--input", "data/dev.tsv", "--verbosity",
                        "short", "--out", str(out)]) == 0
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]
    monkeypatch.setenv("ISOCHRON_THREADS", "many")
    assert cli.run(["translate", "--checkpoint", ck, "--input", "data/dev.tsv", "--verbosity",
                    "short", "--out", str(tmp_path / "z.jsonl")]) == 2
