"""Small shared builders for tests (not oracles)."""

import numpy as np

from isochron import data, model

ALPHABET = "abcdefgh "


def tiny_vocab():
    return data.Vocabulary(sorted(ALPHABET))


def tiny_model(variant="Standard", seed=0, dim=16, heads=2, layers=2, ffn=32, jitter=0.0, **kw):
    vocab = tiny_vocab()
    cfg = model.ModelConfig(vocab_size=len(vocab), layers=layers, model_dim=dim, heads=heads,
                            ffn_dim=ffn, variant=variant, seed=seed, **kw)
    st = model.init_model(cfg, vocab)
    if jitter:
        rng = np.random.default_rng(seed + 99)
        for p in st.params.values():
            p.data += rng.normal(0, jitter, p.shape).astype(p.data.dtype)
    return st


def random_text(rng, lo=2, hi=8):
    return "".join(rng.choice(list("abcdefgh"), size=int(rng.integers(lo, hi + 1))))
