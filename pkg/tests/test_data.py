import unicodedata

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from isochron import data
from isochron.data import (BOS, EOS, PAD, UNK, V_LONG, V_NORMAL, V_SHORT, ParallelExample,
                           Verbosity, Vocabulary)


def test_char_length():
    assert data.char_length("abc") == 3
    assert data.char_length("") == 0
    assert data.char_length("a b") == 3
    assert data.char_length("é") == 1  # NFC composes e + combining acute


@pytest.mark.parametrize("tgt_len,expected", [(96, Verbosity.SHORT), (97, Verbosity.NORMAL),
                                              (105, Verbosity.NORMAL), (106, Verbosity.LONG)])
def test_classify_boundaries(tgt_len, expected):
    assert data.classify_verbosity("x" * 100, "y" * tgt_len) is expected


def test_classify_empty_source():
    with pytest.raises(data.DataError):
        data.classify_verbosity("", "abc")


@given(st.integers(1, 400), st.integers(0, 600))
def test_class_is_function_of_ratio(ns, nt):
    v = data.classify_verbosity("s" * ns, "t" * nt)
    lr = nt / ns
    assert v is (Verbosity.SHORT if lr < 0.97 else Verbosity.LONG if lr > 1.05 else Verbosity.NORMAL)
    assert data.classify_verbosity("q" * ns, "w" * nt) is v


def test_tokenize_examples():
    vocab = Vocabulary(["a", "b"])
    assert vocab.stoi == {"a": 7, "b": 8}
    assert data.tokenize("ab", vocab) == [7, 8]
    ids = data.tokenize("aXb", vocab)
    assert ids == [7, UNK, 8]
    assert data.detokenize(ids, vocab) == "a⁇b"


def test_detokenize_skips_control_ids():
    vocab = Vocabulary(["a"])
    assert data.detokenize([BOS, V_SHORT, 7, PAD, EOS], vocab) == "a"


@settings(max_examples=100)
@given(st.text(min_size=0, max_size=30))
def test_round_trip_in_vocabulary(text):
    vocab = Vocabulary.from_texts([text])
    assert data.detokenize(data.tokenize(text, vocab), vocab) == unicodedata.normalize("NFC", text)


@given(st.text(max_size=30))
def test_surface_text_never_yields_reserved_ids(text):
    vocab = Vocabulary.from_texts(["abc xyz"])
    ids = data.tokenize(text, vocab)
    assert not set(ids) & {PAD, BOS, EOS, V_SHORT, V_NORMAL, V_LONG}


def test_vocabulary_round_trip_and_single_chars():
    v = Vocabulary.from_texts(["hello world"])
    assert Vocabulary.from_list(v.to_list()).itos == v.itos
    with pytest.raises(data.DataError):
        v.add("ab")


def test_tag_example():
    vocab = Vocabulary(["x", "y"])
    ex = ParallelExample(0, "xy", "yx", Verbosity.NORMAL)
    assert data.tag_example(ex, vocab, "prepend").source_ids == [V_NORMAL, 7, 8]
    assert data.tag_example(ex, vocab, "none").source_ids == [7, 8]
    long = ParallelExample(1, "xy", "yx", Verbosity.LONG)
    tagged = data.tag_example(long, vocab, "prepend")
    assert tagged.source_ids == [V_LONG, 7, 8]
    assert tagged.target_ids == [8, 7]
    with pytest.raises(data.DataError):
        data.tag_example(ParallelExample(2, "x", "y"), vocab, "prepend")
    with pytest.raises(data.DataError):
        data.tag_example(ex, vocab, "append")


@given(st.text(alphabet="xy ", min_size=1, max_size=20).filter(str.strip),
       st.text(alphabet="xy ", min_size=1, max_size=20).filter(str.strip),
       st.sampled_from(list(Verbosity)))
def test_prepend_adds_exactly_one_token(src, tgt, v):
    vocab = Vocabulary.from_texts([src, tgt])
    ex = ParallelExample(0, src, tgt, v)
    plain, tagged = data.tag_example(ex, vocab), data.tag_example(ex, vocab, "prepend")
    assert len(tagged.source_ids) == len(plain.source_ids) + 1
    assert tagged.target_ids == plain.target_ids


def test_parallel_example_rejects_empty():
    with pytest.raises(data.DataError):
        ParallelExample(0, " ", "x")


def test_load_corpus(tmp_path):
    p = tmp_path / "c.tsv"
    p.write_text("hello\tbonjour\n", encoding="utf-8")
    [ex] = data.load_corpus(p)
    assert (ex.source, ex.target, ex.verbosity) == ("hello", "bonjour", None)
    p.write_text("hello\tbonjour\tShort\n", encoding="utf-8")
    assert data.load_corpus(p)[0].verbosity is Verbosity.SHORT
    p.write_text("hello\n", encoding="utf-8")
    with pytest.raises(data.DataError, match=":1:"):
        data.load_corpus(p)


def test_load_corpus_errors_carry_line_numbers(tmp_path):
    p = tmp_path / "c.tsv"
    p.write_bytes(b"a\tb\nc\td\r\n")
    with pytest.raises(data.DataError, match=":2: CRLF"):
        data.load_corpus(p)
    p.write_text("a\tb\nc\td\tHuge\n", encoding="utf-8")
    with pytest.raises(data.DataError):
        data.load_corpus(p)


def test_save_load_round_trip(tmp_path):
    exs = [ParallelExample(0, "a b", "cd", Verbosity.SHORT), ParallelExample(1, "é", "ee")]
    p = tmp_path / "c.tsv"
    data.save_corpus(exs, p)
    back = data.load_corpus(p)
    assert [(e.source, e.target, e.verbosity) for e in back] == [(e.source, e.target, e.verbosity) for e in exs]
    data.save_corpus(back, tmp_path / "d.tsv")
    assert (tmp_path / "d.tsv").read_bytes() == p.read_bytes()
    with pytest.raises(data.DataError):
        data.save_corpus([ParallelExample(0, "a\tb", "c")], tmp_path / "e.tsv")


def test_class_histogram_classifies_missing():
    exs = [ParallelExample(0, "aaaa", "bb"), ParallelExample(1, "aa", "bb", Verbosity.LONG)]
    assert data.class_histogram(exs) == {"Short": 1, "Normal": 0, "Long": 1}


def test_synthetic_corpus_deterministic_balanced_and_consistent():
    _, spec = data.toy_specs(0, size_domain=3000)
    a = data.make_synthetic_corpus(spec)
    b = data.make_synthetic_corpus(spec)
    assert [(e.source, e.target) for e in a] == [(e.source, e.target) for e in b]
    hist = data.class_histogram(a)
    assert all(600 <= n <= 1800 for n in hist.values()), hist
    agree = sum(data.classify_verbosity(e.source, e.target) is e.verbosity for e in a)
    assert agree / len(a) >= 0.95


def test_synthetic_spec_json_round_trip(tmp_path):
    g, _ = data.toy_specs(5, size_generic=10)
    g.save(tmp_path / "s.json")
    back = data.SyntheticSpec.load(tmp_path / "s.json")
    assert back.to_json() == g.to_json()
    assert data.make_synthetic_corpus(back)[0].source == data.make_synthetic_corpus(g)[0].source


def test_synthetic_spec_validation():
    g, _ = data.toy_specs(0)
    bad = g.to_json()
    bad["len_min"] = 0
    with pytest.raises(data.DataError):
        data.SyntheticSpec.from_json(bad)
    bad = g.to_json()
    del bad["expansion"]
    with pytest.raises(data.DataError, match="missing"):
        data.SyntheticSpec.from_json(bad)
    bad = g.to_json()
    bad["alphabet_size"] = 10_000
    with pytest.raises(data.DataError):
        data.SyntheticSpec.from_json(bad)


def test_verbosity_parse():
    assert Verbosity.parse(" normal ") is Verbosity.NORMAL
    with pytest.raises(data.DataError):
        Verbosity.parse("medium")
