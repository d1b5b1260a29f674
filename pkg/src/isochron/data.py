"""Corpora, character vocabulary, verbosity classes and the synthetic toy language."""

from __future__ import annotations

import enum
import json
import unicodedata
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

PAD, BOS, EOS, UNK, V_SHORT, V_NORMAL, V_LONG = range(7)
RESERVED = ("<pad>", "<s>", "</s>", "<unk>", "<short>", "<normal>", "<long>")
UNK_GLYPH = "⁇"

SHORT_MAX = 0.97  # LR below this is Short
LONG_MIN = 1.05   # LR above this is Long


class DataError(ValueError):
    pass


class Verbosity(enum.Enum):
    SHORT = "Short"
    NORMAL = "Normal"
    LONG = "Long"

    @property
    def token_id(self) -> int:
        return {Verbosity.SHORT: V_SHORT, Verbosity.NORMAL: V_NORMAL, Verbosity.LONG: V_LONG}[self]

    @property
    def index(self) -> int:
        return self.token_id - V_SHORT

    @classmethod
    def parse(cls, text: str) -> "Verbosity":
        for v in cls:
            if v.value.lower() == text.strip().lower():
                return v
        raise DataError(f"unknown verbosity class {text!r} (expected short, normal or long)")


VERBOSITY_IDS = (V_SHORT, V_NORMAL, V_LONG)


def char_length(text: str) -> int:
    """Number of code points after NFC normalisation, spaces included."""
    return len(unicodedata.normalize("NFC", text))


def length_ratio(source: str, target: str) -> float:
    n = char_length(source)
    if n == 0:
        raise DataError("length ratio undefined for an empty source")
    return char_length(target) / n


def classify_verbosity(source: str, target: str) -> Verbosity:
    lr = length_ratio(source, target)
    if lr < SHORT_MAX:
        return Verbosity.SHORT
    if lr > LONG_MIN:
        return Verbosity.LONG
    return Verbosity.NORMAL


@dataclass
class ParallelExample:
    id: int
    source: str
    target: str
    verbosity: Verbosity | None = None

    def __post_init__(self):
        if not self.source.strip() or not self.target.strip():
            raise DataError(f"example {self.id}: source and target must be non-empty")

    def classified(self) -> "ParallelExample":
        return ParallelExample(self.id, self.source, self.target,
                               classify_verbosity(self.source, self.target))


class Vocabulary:
    """Character vocabulary with the seven reserved ids in front."""

    def __init__(self, chars: Iterable[str] = ()):
        self.itos: list[str] = list(RESERVED)
        self.stoi: dict[str, int] = {}
        for ch in chars:
            self.add(ch)

    def add(self, ch: str) -> int:
        if len(ch) != 1:
            raise DataError(f"vocabulary entries are single characters, got {ch!r}")
        if ch not in self.stoi:
            self.stoi[ch] = len(self.itos)
            self.itos.append(ch)
        return self.stoi[ch]

    @classmethod
    def from_texts(cls, texts: Iterable[str]) -> "Vocabulary":
        chars = set()
        for t in texts:
            chars.update(unicodedata.normalize("NFC", t))
        return cls(sorted(chars))

    def __len__(self) -> int:
        return len(self.itos)

    def to_list(self) -> list[str]:
        return self.itos[len(RESERVED):]

    @classmethod
    def from_list(cls, chars: Sequence[str]) -> "Vocabulary":
        return cls(chars)


def tokenize(text: str, vocab: Vocabulary) -> list[int]:
    return [vocab.stoi.get(ch, UNK) for ch in unicodedata.normalize("NFC", text)]


def detokenize(ids: Iterable[int], vocab: Vocabulary) -> str:
    out = []
    for i in ids:
        i = int(i)
        if i in (PAD, BOS, EOS) or i in VERBOSITY_IDS:
            continue
        out.append(UNK_GLYPH if i == UNK or i >= len(vocab) else vocab.itos[i])
    return "".join(out)


@dataclass
class TaggedPair:
    source_ids: list[int]
    target_ids: list[int]
    verbosity: Verbosity | None


def tag_example(example: ParallelExample, vocab: Vocabulary, placement: str = "none") -> TaggedPair:
    """Tokenize an example; ``placement="prepend"`` puts the class token in front of the source."""
    src = tokenize(example.source, vocab)
    tgt = tokenize(example.target, vocab)
    if placement == "prepend":
        if example.verbosity is None:
            raise DataError(f"example {example.id}: verbosity class required to prepend a tag")
        src = [example.verbosity.token_id] + src
    elif placement != "none":
        raise DataError(f"unknown tag placement {placement!r}")
    return TaggedPair(src, tgt, example.verbosity)


# -- corpus files -------------------------------------------------------------

def load_corpus(path: str | Path) -> list[ParallelExample]:
    examples = []
    with open(path, encoding="utf-8", newline="\n") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw[:-1] if raw.endswith("\n") else raw
            if line.endswith("\r"):
                raise DataError(f"{path}:{lineno}: CRLF line endings are not accepted")
            cols = line.split("\t")
            if len(cols) not in (2, 3):
                raise DataError(f"{path}:{lineno}: expected 2 or 3 tab-separated columns, got {len(cols)}")
            verbosity = Verbosity.parse(cols[2]) if len(cols) == 3 else None
            try:
                examples.append(ParallelExample(len(examples), cols[0], cols[1], verbosity))
            except DataError as err:
                raise DataError(f"{path}:{lineno}: {err}") from None
    return examples


def save_corpus(examples: Iterable[ParallelExample], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for ex in examples:
            for text in (ex.source, ex.target):
                if "\t" in text or "\n" in text or "\r" in text:
                    raise DataError(f"example {ex.id}: tabs and newlines are not allowed inside sentences")
            cols = [ex.source, ex.target] + ([ex.verbosity.value] if ex.verbosity else [])
            fh.write("\t".join(cols) + "\n")


def class_histogram(examples: Iterable[ParallelExample]) -> dict[str, int]:
    hist = {v.value: 0 for v in Verbosity}
    for ex in examples:
        v = ex.verbosity or classify_verbosity(ex.source, ex.target)
        hist[v.value] += 1
    return hist


# -- synthetic toy language ---------------------------------------------------
#
# Source "symbols" are two-letter syllables. Each syllable has one rendering per
# verbosity class: 1 character (mostly) for Short, 2 for Normal, 3 (mostly) for
# Long. Sentences are words of 1-3 syllables separated by single spaces, and
# spaces are copied to the target, so the class fixes the length ratio.

_CONSONANTS = "bdfgklmnprstvz"
_VOWELS = "aeiou"
_TARGET_CHARS = "abcdefghijklmnopqrstuvwxyz"


@dataclass
class SyntheticSpec:
    alphabet_size: int
    len_min: int
    len_max: int
    expansion: dict[str, dict[str, str]]
    corpus_size: int
    seed: int
    alphabet_offset: int = 0
    class_weights: dict[str, float] = field(
        default_factory=lambda: {"Short": 1 / 3, "Normal": 1 / 3, "Long": 1 / 3})

    def symbols(self) -> list[str]:
        keys = list(self.expansion)
        chosen = keys[self.alphabet_offset:self.alphabet_offset + self.alphabet_size]
        if not chosen or self.alphabet_size <= 0:
            raise DataError("synthetic spec has an empty source alphabet")
        if len(chosen) < self.alphabet_size:
            raise DataError(f"alphabet_size {self.alphabet_size} exceeds expansion table after offset")
        return chosen

    def validate(self) -> None:
        self.symbols()
        if not 1 <= self.len_min <= self.len_max:
            raise DataError(f"bad length range [{self.len_min}, {self.len_max}]")
        if self.corpus_size < 1:
            raise DataError("corpus_size must be positive")
        if set(self.class_weights) != {v.value for v in Verbosity} or min(self.class_weights.values()) < 0:
            raise DataError(f"class_weights must give a non-negative weight to each class: {self.class_weights}")
        for sym, row in self.expansion.items():
            if set(row) != {v.value for v in Verbosity}:
                raise DataError(f"expansion for {sym!r} must cover Short, Normal and Long")
            if not all(1 <= len(s) <= 3 for s in row.values()):
                raise DataError(f"expansion strings for {sym!r} must have 1-3 characters")
            if not len(row["Short"]) <= len(row["Normal"]) <= len(row["Long"]):
                raise DataError(f"expansion for {sym!r} is not ordered by length")
        mean_len = {c: np.mean([len(self.expansion[s][c]) for s in self.symbols()])
                    for c in ("Short", "Normal", "Long")}
        if not mean_len["Short"] < mean_len["Normal"] < mean_len["Long"]:
            raise DataError(f"expansion table does not separate the classes by length: {mean_len}")

    def to_json(self) -> dict:
        return {
            "alphabet_size": self.alphabet_size, "len_min": self.len_min, "len_max": self.len_max,
            "expansion": self.expansion, "corpus_size": self.corpus_size, "seed": self.seed,
            "alphabet_offset": self.alphabet_offset, "class_weights": self.class_weights,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "SyntheticSpec":
        missing = {"alphabet_size", "len_min", "len_max", "expansion", "corpus_size", "seed"} - set(obj)
        if missing:
            raise DataError(f"synthetic spec is missing keys: {sorted(missing)}")
        spec = cls(int(obj["alphabet_size"]), int(obj["len_min"]), int(obj["len_max"]),
                   {k: dict(v) for k, v in obj["expansion"].items()}, int(obj["corpus_size"]),
                   int(obj["seed"]), int(obj.get("alphabet_offset", 0)),
                   dict(obj.get("class_weights") or {"Short": 1 / 3, "Normal": 1 / 3, "Long": 1 / 3}))
        spec.validate()
        return spec

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2, ensure_ascii=False) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "SyntheticSpec":
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


def make_expansion_table(n_symbols: int, seed: int) -> dict[str, dict[str, str]]:
    """Random toy lexicon: syllable -> per-class target string.

    Short renderings are one character except for one syllable in four (two
    characters); Long renderings are three characters except one in four (two).
    """
    syllables = [c + v for c in _CONSONANTS for v in _VOWELS]
    if not 1 <= n_symbols <= len(syllables):
        raise DataError(f"n_symbols must be in [1, {len(syllables)}]")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(syllables))[:n_symbols]
    letters = np.array(list(_TARGET_CHARS))

    def word(n):
        return "".join(rng.choice(letters, size=n))

    table = {}
    for rank, idx in enumerate(order):
        syl = syllables[idx]
        table[syl] = {
            "Short": word(2 if rank % 4 == 3 else 1),
            "Normal": word(2),
            "Long": word(2 if rank % 4 == 1 else 3),
        }
    return table


def render(symbols: Sequence[Sequence[str]], expansion: dict[str, dict[str, str]],
           verbosity: Verbosity) -> tuple[str, str]:
    source = " ".join("".join(w) for w in symbols)
    target = " ".join("".join(expansion[s][verbosity.value] for s in w) for w in symbols)
    return source, target


def make_synthetic_corpus(spec: SyntheticSpec) -> list[ParallelExample]:
    """Deterministic corpus; each pair carries the class it was rendered with.

    Sentences whose rendered length ratio would fall outside their class band
    are redrawn (up to 20 times), so generator and classifier agree.
    """
    spec.validate()
    symbols = spec.symbols()
    rng = np.random.default_rng(spec.seed)
    classes = list(Verbosity)
    weights = np.array([spec.class_weights[v.value] for v in classes], dtype=np.float64)
    weights = weights / weights.sum()
    out = []
    for i in range(spec.corpus_size):
        verbosity = classes[int(rng.choice(3, p=weights))]
        for _ in range(20):
            n = int(rng.integers(spec.len_min, spec.len_max + 1))
            picks = [symbols[j] for j in rng.integers(0, len(symbols), size=n)]
            words, pos = [], 0
            while pos < n:
                w = int(rng.integers(1, 4))
                words.append(picks[pos:pos + w])
                pos += w
            source, target = render(words, spec.expansion, verbosity)
            if classify_verbosity(source, target) is verbosity:
                break
        out.append(ParallelExample(i, source, target, verbosity))
    return out


def toy_specs(seed: int, size_generic: int = 3000, size_domain: int = 3000,
              n_symbols: int = 40, domain_weights: dict[str, float] | None = None
              ) -> tuple[SyntheticSpec, SyntheticSpec]:
    """Generic and in-domain specs sharing one lexicon with shifted alphabets and lengths."""
    table = make_expansion_table(n_symbols, seed)
    span = int(n_symbols * 0.75)
    generic = SyntheticSpec(span, 3, 8, table, size_generic, seed + 1, 0)
    domain = SyntheticSpec(span, 4, 10, table, size_domain, seed + 2, n_symbols - span,
                           domain_weights or {"Short": 1 / 3, "Normal": 1 / 3, "Long": 1 / 3})
    return generic, domain
