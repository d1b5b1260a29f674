"""Beam search with length/coverage penalties, greedy and budget-capped decoding."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .data import BOS, EOS, Verbosity, char_length, detokenize, tokenize
from .model import ModelScorer, ModelState

# prefixes -> (log-probs [B, V], cross attention of the last position [B, S] or None)
Scorer = Callable[[Sequence[Sequence[int]]], tuple[np.ndarray, np.ndarray | None]]


class SearchError(ValueError):
    pass


@dataclass(frozen=True)
class SearchParams:
    beam_size: int = 5
    alpha_lp: float = 0.0
    beta_cp: float = 0.0
    max_steps: int | None = None  # None: 2 * source tokens + 10
    nbest: int = 1

    def __post_init__(self):
        if self.beam_size < 1:
            raise SearchError("beam_size must be >= 1")
        if not 1 <= self.nbest <= self.beam_size:
            raise SearchError(f"nbest must be in [1, beam_size], got {self.nbest}")
        if self.alpha_lp < 0 or self.beta_cp < 0:
            raise SearchError("alpha_lp and beta_cp must be non-negative")
        if self.max_steps is not None and self.max_steps < 1:
            raise SearchError("max_steps must be >= 1")

    def to_json(self) -> dict:
        return {"beam_size": self.beam_size, "alpha_lp": self.alpha_lp, "beta_cp": self.beta_cp,
                "max_steps": self.max_steps, "nbest": self.nbest}


@dataclass
class Hypothesis:
    tokens: list[int] | None
    text: str
    sum_logprob: float
    score: float
    char_len: int
    attn: np.ndarray | None = field(default=None, repr=False)
    forced: bool = False
    rescored: float | None = None

    @property
    def n_tokens(self) -> int:
        """Decoded length excluding BOS, including EOS."""
        return len(self.tokens) - 1 if self.tokens is not None else self.char_len + 1


@dataclass
class NBestList:
    source: str
    source_chars: int
    hypotheses: list[Hypothesis]
    id: int = 0

    def best(self) -> Hypothesis:
        return self.hypotheses[0]


def length_penalty(target_len: int, alpha_lp: float) -> float:
    """((5 + |t|) / 6) ** alpha."""
    return ((5.0 + target_len) / 6.0) ** alpha_lp


def coverage_penalty(attn: np.ndarray, beta_cp: float) -> float:
    """beta * sum_j log(min(sum_i a_ij, 1)) for attention rows i over source positions j."""
    attn = np.asarray(attn, dtype=np.float64)
    if attn.ndim != 2:
        raise SearchError(f"attention must be a steps x source matrix, got shape {attn.shape}")
    rows = attn.sum(axis=1)
    if np.any(np.abs(rows - 1.0) > 1e-4):
        raise SearchError("attention rows must sum to 1")
    if beta_cp == 0.0:
        return 0.0
    mass = np.minimum(attn.sum(axis=0), 1.0)
    return float(beta_cp * np.log(np.maximum(mass, 1e-12)).sum())


def hypothesis_score(sum_logprob: float, n_tokens: int, attn: np.ndarray | None,
                     params: SearchParams) -> float:
    s = sum_logprob / length_penalty(n_tokens, params.alpha_lp)
    if params.beta_cp and attn is not None:
        s += coverage_penalty(attn, params.beta_cp)
    return s


def sort_key(h: Hypothesis):
    return (-h.score, len(h.tokens) if h.tokens is not None else h.char_len, tuple(h.tokens or ()))


def search(scorer: Scorer, params: SearchParams, max_steps: int,
           detok: Callable[[Sequence[int]], str] = lambda ids: " ".join(map(str, ids))
           ) -> list[Hypothesis]:
    """Beam search returning up to ``params.nbest`` finished hypotheses, best first.

    At each step the ``beam_size`` best (prefix, token) extensions by cumulative
    log-probability are kept; those ending in EOS leave the beam as finished.
    At ``max_steps`` only EOS may be chosen (such hypotheses are flagged).
    """
    k = params.beam_size
    alive: list[tuple[list[int], float, list[np.ndarray]]] = [([BOS], 0.0, [])]
    finished: list[Hypothesis] = []
    worst_lp = length_penalty(max_steps, params.alpha_lp)
    for step in range(1, max_steps + 1):
        logp, attn = scorer([a[0] for a in alive])
        logp = np.asarray(logp, dtype=np.float64)
        total = np.array([a[1] for a in alive])[:, None] + logp
        if step == max_steps:
            only_eos = np.full_like(total, -np.inf)
            only_eos[:, EOS] = total[:, EOS]
            total = only_eos
        flat = total.reshape(-1)
        finite = np.flatnonzero(np.isfinite(flat))
        # best first; ties -> lower beam index, then lower token id
        order = finite[np.argsort(-flat[finite], kind="stable")][:k]
        survivors = []
        for pos in order:
            i, tok = divmod(int(pos), total.shape[1])
            tokens, lp = alive[i][0] + [tok], float(flat[pos])
            rows = alive[i][2] + ([attn[i]] if attn is not None else [])
            if tok == EOS:
                a = np.stack(rows) if rows else None
                n = len(tokens) - 1
                finished.append(Hypothesis(tokens, detok(tokens), lp,
                                           hypothesis_score(lp, n, a, params),
                                           0, a, forced=step == max_steps))
            else:
                survivors.append((tokens, lp, rows))
        alive = survivors
        if not alive:
            break
        if len(finished) >= params.nbest:
            kth = sorted(h.score for h in finished)[-params.nbest]
            if kth >= max(a[1] for a in alive) / worst_lp:
                break
    finished.sort(key=sort_key)
    for h in finished:
        h.char_len = char_length(h.text)
    return finished[:params.nbest]


def greedy(scorer: Scorer, max_steps: int) -> tuple[list[int], float, bool]:
    tokens, lp = [BOS], 0.0
    for step in range(1, max_steps + 1):
        logp, _ = scorer([tokens])
        row = np.asarray(logp[0], dtype=np.float64)
        tok = EOS if step == max_steps else int(np.argmax(row))
        tokens.append(tok)
        lp += float(row[tok])
        if tok == EOS:
            return tokens, lp, step == max_steps and int(np.argmax(row)) != EOS
    raise AssertionError("unreachable")


def source_ids(state: ModelState, source: str, verbosity: Verbosity | None) -> list[int]:
    ids = tokenize(source, state.vocab)
    if state.config.variant.prepends:
        if verbosity is None:
            raise SearchError(f"variant {state.config.variant.value} needs a verbosity class")
        ids = [verbosity.token_id] + ids
    return ids


def default_max_steps(state: ModelState, n_source: int, params: SearchParams | None = None) -> int:
    wanted = params.max_steps if params and params.max_steps else 2 * n_source + 10
    return max(1, min(wanted, state.config.max_len))


def _scorer_for(state, source, verbosity):
    ids = source_ids(state, source, verbosity)
    verb = verbosity if state.config.variant.conditioned else None
    return ModelScorer(state, ids, verb), ids


def beam_search(state: ModelState, source: str, verbosity: Verbosity | None,
                params: SearchParams, sent_id: int = 0) -> NBestList:
    scorer, ids = _scorer_for(state, source, verbosity)
    hyps = search(scorer, params, default_max_steps(state, len(ids), params),
                  lambda t: detokenize(t, state.vocab))
    return NBestList(source, char_length(source), hyps, sent_id)


def greedy_decode(state: ModelState, source: str, verbosity: Verbosity | None,
                  max_steps: int | None = None) -> Hypothesis:
    scorer, ids = _scorer_for(state, source, verbosity)
    steps = max_steps or default_max_steps(state, len(ids))
    tokens, lp, forced = greedy(scorer, steps)
    text = detokenize(tokens, state.vocab)
    return Hypothesis(tokens, text, lp, lp, char_length(text), forced=forced)


def truncate_tokens(scorer: Scorer, detok: Callable[[Sequence[int]], str], char_budget: int,
                    max_steps: int) -> tuple[list[int], float, bool]:
    """Greedy decoding that closes the output before it would exceed ``char_budget``."""
    if char_budget < 0:
        raise SearchError("char_budget must be >= 0")
    tokens, lp = [BOS], 0.0
    for step in range(1, max_steps + 1):
        logp, _ = scorer([tokens])
        row = np.asarray(logp[0], dtype=np.float64)
        tok = int(np.argmax(row))
        cut = False
        if tok != EOS and (step == max_steps or char_length(detok(tokens[1:] + [tok])) > char_budget):
            tok, cut = EOS, True
        tokens.append(tok)
        lp += float(row[tok])
        if tok == EOS:
            return tokens, lp, cut
    raise AssertionError("unreachable")


def truncate_decode(state: ModelState, source: str, verbosity: Verbosity | None,
                    char_budget: int, max_steps: int | None = None) -> Hypothesis:
    scorer, ids = _scorer_for(state, source, verbosity)
    steps = max_steps or default_max_steps(state, len(ids))
    tokens, lp, cut = truncate_tokens(scorer, lambda t: detokenize(t, state.vocab), char_budget, steps)
    text = detokenize(tokens, state.vocab)
    return Hypothesis(tokens, text, lp, lp, char_length(text), forced=cut)


# -- N-best JSON Lines ------------------------------------------------------------

def nbest_to_json(nb: NBestList) -> dict:
    hyps = []
    for h in nb.hypotheses:
        row = {"text": h.text, "logprob": h.sum_logprob, "chars": h.char_len, "score": h.score}
        if h.rescored is not None:
            row["rescored"] = h.rescored
        hyps.append(row)
    return {"id": nb.id, "source": nb.source, "source_chars": nb.source_chars, "hypotheses": hyps}


def nbest_from_json(obj: dict) -> NBestList:
    try:
        hyps = [Hypothesis(None, h["text"], float(h["logprob"]), float(h["score"]), int(h["chars"]),
                           rescored=h.get("rescored")) for h in obj["hypotheses"]]
        return NBestList(obj["source"], int(obj["source_chars"]), hyps, int(obj["id"]))
    except (KeyError, TypeError, ValueError) as err:
        raise SearchError(f"malformed N-best record: {err}") from None


def write_nbest(lists: Iterable[NBestList], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for nb in lists:
            fh.write(json.dumps(nbest_to_json(nb), ensure_ascii=False) + "\n")


def read_nbest(path: str | Path) -> list[NBestList]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                out.append(nbest_from_json(json.loads(line)))
            except (json.JSONDecodeError, SearchError) as err:
                raise SearchError(f"{path}:{lineno}: {err}") from None
    return out

