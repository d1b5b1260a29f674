"""Corpus BLEU (13a tokenization), length-ratio compliance and comparison reports."""

from __future__ import annotations

import csv
import json
import math
import re
import statistics
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .data import char_length, classify_verbosity

REPORT_VERSION = 1
MAX_ORDER = 4
ZERO_FLOOR = 1e-9  # numerator used for an n-gram order with no matches
BLEU_SIGNATURE = "nrefs:1|case:mixed|eff:no|tok:13a|smooth:floor-1e-9|version:isochron"


class EvalError(ValueError):
    pass


_13A_RULES = [
    (re.compile(r"([\{-\~\[-\` -\&\(-\+\:-\@\/])"), r" \1 "),
    (re.compile(r"([^0-9])([\.,])"), r"\1 \2 "),
    (re.compile(r"([\.,])([^0-9])"), r" \1 \2"),
    (re.compile(r"([0-9])(-)"), r"\1 \2 "),
]


def tokenize_13a(line: str) -> str:
    """mteval-v13a style tokenization: split off punctuation and symbols."""
    line = line.replace("<skipped>", "").replace("-\n", "").replace("\n", " ")
    if "&" in line:
        line = (line.replace("&quot;", '"').replace("&amp;", "&")
                .replace("&lt;", "<").replace("&gt;", ">"))
    line = f" {line} "
    for pattern, repl in _13A_RULES:
        line = pattern.sub(repl, line)
    return " ".join(line.split())


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


@dataclass
class BleuStats:
    """Sufficient statistics; shards merge by addition."""
    hyp_len: int = 0
    ref_len: int = 0
    matches: list[int] = field(default_factory=lambda: [0] * MAX_ORDER)
    totals: list[int] = field(default_factory=lambda: [0] * MAX_ORDER)

    def __add__(self, other: "BleuStats") -> "BleuStats":
        return BleuStats(self.hyp_len + other.hyp_len, self.ref_len + other.ref_len,
                         [a + b for a, b in zip(self.matches, other.matches)],
                         [a + b for a, b in zip(self.totals, other.totals)])

    def score(self) -> float:
        if self.hyp_len == 0:
            return 0.0
        log_p = 0.0
        for m, t in zip(self.matches, self.totals):
            if t == 0:
                return 0.0
            log_p += math.log((m if m > 0 else ZERO_FLOOR) / t)
        bp = 1.0 if self.hyp_len >= self.ref_len else math.exp(1.0 - self.ref_len / self.hyp_len)
        return 100.0 * bp * math.exp(log_p / MAX_ORDER)


def sentence_stats(hyp: str, ref: str) -> BleuStats:
    h, r = tokenize_13a(hyp).split(), tokenize_13a(ref).split()
    st = BleuStats(len(h), len(r))
    for n in range(1, MAX_ORDER + 1):
        hc, rc = _ngrams(h, n), _ngrams(r, n)
        st.matches[n - 1] = sum(min(c, rc[g]) for g, c in hc.items())
        st.totals[n - 1] = max(len(h) - n + 1, 0)
    return st


def bleu_stats(hypotheses: Sequence[str], references: Sequence[str]) -> BleuStats:
    if len(hypotheses) != len(references):
        raise EvalError(f"{len(hypotheses)} hypotheses vs {len(references)} references")
    if not hypotheses:
        raise EvalError("BLEU needs at least one sentence")
    total = BleuStats()
    for h, r in zip(hypotheses, references):
        total = total + sentence_stats(h, r)
    return total


def bleu(hypotheses: Sequence[str], references: Sequence[str]) -> float:
    """Corpus BLEU-4 with clipped counts and brevity penalty, in [0, 100]."""
    return bleu_stats(hypotheses, references).score()


def lr_compliance(pairs: Sequence[tuple[str, str]], tolerance: float = 0.10) -> tuple[float, list[float]]:
    """Percent of (source, hypothesis) pairs whose char length ratio is within 1 +/- tolerance."""
    if not pairs:
        raise EvalError("compliance needs at least one pair")
    ratios = []
    for src, hyp in pairs:
        n = char_length(src)
        if n == 0:
            raise EvalError("empty source sentence")
        ratios.append(char_length(hyp) / n)
    lo, hi = 1.0 - tolerance, 1.0 + tolerance
    ok = sum(1 for r in ratios if lo - 1e-12 <= r <= hi + 1e-12)
    return 100.0 * ok / len(ratios), ratios


@dataclass
class EvalReport:
    system: str
    bleu: float
    compliance_pct: float
    mean_lr: float
    median_lr: float
    sentences: int
    per_class: dict[str, dict[str, float]]
    config: dict = field(default_factory=dict)
    signature: str = BLEU_SIGNATURE
    version: int = REPORT_VERSION

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, obj: dict) -> "EvalReport":
        if obj.get("version") != REPORT_VERSION:
            raise EvalError(f"unsupported report version {obj.get('version')}")
        return cls(**obj)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1, sort_keys=True) + "\n",
                              encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "EvalReport":
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


def build_report(hypotheses: Sequence[str], references: Sequence[str], sources: Sequence[str],
                 config: dict | None = None, system: str = "system",
                 tolerance: float = 0.10) -> EvalReport:
    """Quality and verbosity summary for one system.

    The per-class breakdown groups sentences by the class of the *reference*
    relative to its source and reports compliance within each group.
    """
    if not (len(hypotheses) == len(references) == len(sources)):
        raise EvalError(f"misaligned inputs: {len(hypotheses)} hypotheses, {len(references)} "
                        f"references, {len(sources)} sources")
    score = bleu(hypotheses, references)
    pct, ratios = lr_compliance(list(zip(sources, hypotheses)), tolerance)
    lo, hi = 1.0 - tolerance, 1.0 + tolerance
    groups: dict[str, list[float]] = {}
    for src, ref, r in zip(sources, references, ratios):
        groups.setdefault(classify_verbosity(src, ref).value, []).append(r)
    per_class = {}
    for cls in ("Short", "Normal", "Long"):
        rs = groups.get(cls, [])
        ok = sum(1 for r in rs if lo - 1e-12 <= r <= hi + 1e-12)
        per_class[cls] = {"count": len(rs),
                          "compliance_pct": 100.0 * ok / len(rs) if rs else 0.0,
                          "mean_lr": statistics.fmean(rs) if rs else 0.0}
    return EvalReport(system, score, pct, statistics.fmean(ratios), statistics.median(ratios),
                      len(ratios), per_class, dict(config or {}))


def comparison_table(reports: Iterable[EvalReport]) -> str:
    """Plain-text table, rows sorted by compliance then BLEU (both descending)."""
    rows = sorted(reports, key=lambda r: (-r.compliance_pct, -r.bleu, r.system))
    width = max([len("system")] + [len(r.system) for r in rows])
    lines = [f"{'system':<{width}}  {'BLEU':>6}  {'LR ok %':>7}  {'mean LR':>7}  {'median':>6}  {'n':>5}"]
    lines.append("-" * len(lines[0]))
    for r in rows:
        lines.append(f"{r.system:<{width}}  {r.bleu:6.2f}  {r.compliance_pct:7.2f}  "
                     f"{r.mean_lr:7.3f}  {r.median_lr:6.3f}  {r.sentences:5d}")
    return "\n".join(lines)


def write_ratios_csv(sources: Sequence[str], hypotheses: Sequence[str], path: str | Path) -> None:
    _, ratios = lr_compliance(list(zip(sources, hypotheses)))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "source_chars", "hyp_chars", "ratio"])
        for i, (s, h, r) in enumerate(zip(sources, hypotheses, ratios)):
            w.writerow([i, char_length(s), char_length(h), f"{r:.6f}"])
