"""Independent reference implementations the tests compare against.

Nothing here imports the code under test except to call the function being checked.
"""

from __future__ import annotations

import itertools
import math

import numpy as np


def central_diff(f, x: np.ndarray, h: float = 1e-3) -> np.ndarray:
    """d f / d x by central differences; ``f`` maps the (mutated in place) array to a float."""
    g = np.zeros_like(x, dtype=np.float64)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        old = x[idx]
        x[idx] = old + h
        up = f(x)
        x[idx] = old - h
        down = f(x)
        x[idx] = old
        g[idx] = (up - down) / (2 * h)
    return g


def rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Normwise relative error max|a - n| / max(max|a|, max|n|)."""
    scale = max(np.abs(analytic).max(), np.abs(numeric).max(), 1e-8)
    return float(np.abs(analytic - numeric).max() / scale)


def softmax_ref(x):
    e = [math.exp(v - max(x)) for v in x]
    s = sum(e)
    return [v / s for v in e]


class TableModel:
    """Hand-built autoregressive model: next-token log-probs are a fixed
    random function of the prefix (hashed through a seeded generator)."""

    def __init__(self, seed: int, vocab: int, eos: int, bos: int = 1, banned=(), temp: float = 2.0):
        self.seed, self.vocab, self.eos, self.bos = seed, vocab, eos, bos
        self.banned = list(banned)
        self.temp = temp
        self.calls = 0

    def logp(self, prefix) -> np.ndarray:
        key = hash((self.seed,) + tuple(int(t) for t in prefix)) & 0xFFFFFFFF
        z = np.random.default_rng(key).normal(0, self.temp, self.vocab)
        z[self.banned] = -np.inf
        m = z.max()
        return z - (m + np.log(np.exp(z - m).sum()))

    def __call__(self, prefixes):
        self.calls += 1
        return np.stack([self.logp(p) for p in prefixes]), None


def exhaustive_best(model: TableModel, max_steps: int, alpha_lp: float = 0.0):
    """Enumerate every EOS-terminated sequence of at most ``max_steps`` tokens.

    At the last step only EOS is allowed, matching the decoder's forced stop.
    Returns (best score, tokens incl. BOS) under score = logP / ((5+n)/6)^alpha.
    """
    best = (-math.inf, None)
    allowed = [t for t in range(model.vocab) if t not in model.banned]
    for n in range(1, max_steps + 1):
        body = [t for t in allowed if t != model.eos]
        for mid in itertools.product(body, repeat=n - 1):
            seq = [model.bos, *mid, model.eos]
            lp = sum(model.logp(seq[:i])[seq[i]] for i in range(1, len(seq)))
            s = lp / ((5 + n) / 6) ** alpha_lp
            if s > best[0] or (s == best[0] and best[1] is not None and len(seq) < len(best[1])):
                best = (s, seq)
    return best


def greedy_ref(model: TableModel, max_steps: int):
    seq, lp = [model.bos], 0.0
    for step in range(1, max_steps + 1):
        row = model.logp(seq)
        tok = model.eos if step == max_steps else int(np.argmax(row))
        seq.append(tok)
        lp += row[tok]
        if tok == model.eos:
            break
    return seq, lp


def bleu_ref_ngrams(tokens, n):
    out = {}
    for i in range(len(tokens) - n + 1):
        g = tuple(tokens[i:i + n])
        out[g] = out.get(g, 0) + 1
    return out
