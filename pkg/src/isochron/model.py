"""Pre-norm encoder-decoder transformer with verbosity conditioning variants."""

from __future__ import annotations

import enum
import json
import math
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import numcore as nc
from .data import (BOS, EOS, PAD, V_LONG, V_NORMAL, V_SHORT, VERBOSITY_IDS, TaggedPair,
                   Verbosity, Vocabulary)
from .numcore import Tensor

FORMAT_VERSION = 1
WEIGHTS_MAGIC = b"ISOCWTS1"
NEG = -1e9
# never emitted by the decoder
BANNED_OUTPUTS = (PAD, BOS, V_SHORT, V_NORMAL, V_LONG)


class Variant(str, enum.Enum):
    STANDARD = "Standard"
    ENC_TOK = "EncTok"
    ENC_SUM = "EncSum"
    DEC_EMB = "DecEmb"
    ENC_DEC_EMB = "EncDecEmb"
    ENC_TOK_DEC_EMB = "EncTokDecEmb"
    OUTPUT_BIAS = "OutputBias"

    @property
    def prepends(self) -> bool:
        return self in (Variant.ENC_TOK, Variant.ENC_TOK_DEC_EMB)

    @property
    def enc_sum(self) -> bool:
        return self in (Variant.ENC_SUM, Variant.ENC_DEC_EMB)

    @property
    def dec_sum(self) -> bool:
        return self in (Variant.DEC_EMB, Variant.ENC_DEC_EMB, Variant.ENC_TOK_DEC_EMB)

    @property
    def conditioned(self) -> bool:
        return self is not Variant.STANDARD


class ModelError(ValueError):
    pass


class CheckpointError(ModelError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    layers: int = 2
    model_dim: int = 64
    heads: int = 4
    ffn_dim: int = 256
    max_len: int = 256
    dropout_attn: float = 0.1
    dropout_other: float = 0.3
    variant: Variant = Variant.STANDARD
    seed: int = 0
    share_verbosity_embedding: bool = True

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        if self.model_dim % self.heads:
            raise ModelError(f"model_dim {self.model_dim} not divisible by heads {self.heads}")
        for p in (self.dropout_attn, self.dropout_other):
            if not 0.0 <= p < 1.0:
                raise ModelError(f"dropout probability {p} outside [0, 1)")
        if min(self.vocab_size, self.layers, self.model_dim, self.ffn_dim, self.max_len) < 1:
            raise ModelError("sizes must be positive")

    def to_json(self) -> dict:
        d = asdict(self)
        d["variant"] = self.variant.value
        return d

    @classmethod
    def from_json(cls, obj: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in obj.items() if k in known})


class ModelState:
    """All weights of one model plus its config and vocabulary."""

    def __init__(self, config: ModelConfig, params: dict[str, Tensor], vocab: Vocabulary):
        self.config = config
        self.params = params
        self.vocab = vocab

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def with_variant(self, variant: Variant | str) -> "ModelState":
        """Same weights (shared, not copied) viewed under another conditioning variant."""
        return ModelState(replace(self.config, variant=Variant(variant)), self.params, self.vocab)

    def copy(self) -> "ModelState":
        return ModelState(self.config, {k: Tensor(v.data.copy(), requires_grad=True, name=k)
                                        for k, v in self.params.items()}, self.vocab)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None


def _layer_shapes(prefix: str, d: int, f: int, cross: bool) -> list[tuple[str, tuple[int, ...]]]:
    shapes = [(f"{prefix}.ln1.g", (d,)), (f"{prefix}.ln1.b", (d,))]
    for w in "qkvo":
        shapes += [(f"{prefix}.self.w{w}", (d, d)), (f"{prefix}.self.b{w}", (d,))]
    if cross:
        shapes += [(f"{prefix}.ln2.g", (d,)), (f"{prefix}.ln2.b", (d,))]
        for w in "qkvo":
            shapes += [(f"{prefix}.cross.w{w}", (d, d)), (f"{prefix}.cross.b{w}", (d,))]
    shapes += [(f"{prefix}.lnf.g", (d,)), (f"{prefix}.lnf.b", (d,)),
               (f"{prefix}.ff.w1", (d, f)), (f"{prefix}.ff.b1", (f,)),
               (f"{prefix}.ff.w2", (f, d)), (f"{prefix}.ff.b2", (d,))]
    return shapes


def param_shapes(cfg: ModelConfig) -> list[tuple[str, tuple[int, ...]]]:
    d, v = cfg.model_dim, cfg.vocab_size
    shapes = [("emb", (v, d)), ("verb", (3, d)), ("verb_dec", (3, d)), ("verb_out", (3, v))]
    for i in range(cfg.layers):
        shapes += _layer_shapes(f"enc.{i}", d, cfg.ffn_dim, cross=False)
    shapes += [("enc.ln.g", (d,)), ("enc.ln.b", (d,))]
    for i in range(cfg.layers):
        shapes += _layer_shapes(f"dec.{i}", d, cfg.ffn_dim, cross=True)
    shapes += [("dec.ln.g", (d,)), ("dec.ln.b", (d,)), ("out.w", (d, v)), ("out.b", (v,))]
    return shapes


def init_model(cfg: ModelConfig, vocab: Vocabulary) -> ModelState:
    if len(vocab) != cfg.vocab_size:
        raise ModelError(f"config vocab_size {cfg.vocab_size} != vocabulary size {len(vocab)}")
    rng = np.random.default_rng(cfg.seed)
    params = {}
    for name, shape in param_shapes(cfg):
        leaf = name.rsplit(".", 1)[-1]
        if name in ("emb", "verb", "verb_dec"):
            value = rng.normal(0.0, cfg.model_dim ** -0.5, size=shape)
        elif name == "verb_out" or leaf.startswith("b"):
            value = np.zeros(shape)
        elif leaf == "g":
            value = np.ones(shape)
        else:
            bound = math.sqrt(6.0 / (shape[0] + shape[1]))
            if name == "out.w":
                bound *= 0.1  # near-uniform initial output distribution
            value = rng.uniform(-bound, bound, size=shape)
        params[name] = Tensor(value.astype(np.float32), requires_grad=True, name=name)
    return ModelState(cfg, params, vocab)


def sinusoid_table(max_len: int, d: int) -> np.ndarray:
    pos = np.arange(max_len, dtype=np.float64)[:, None]
    div = np.exp(np.arange(0, d, 2, dtype=np.float64) * (-math.log(10000.0) / d))
    table = np.zeros((max_len, d))
    table[:, 0::2] = np.sin(pos * div)
    table[:, 1::2] = np.cos(pos * div)[:, : d // 2]
    return table.astype(np.float32)


_PE_CACHE: dict[tuple[int, int], np.ndarray] = {}


def _positions(cfg: ModelConfig, length: int) -> np.ndarray:
    key = (cfg.max_len, cfg.model_dim)
    if key not in _PE_CACHE:
        _PE_CACHE[key] = sinusoid_table(*key)
    return _PE_CACHE[key][:length]


class _Ctx:
    """Per-forward settings: dropout rates, generator, training flag."""

    def __init__(self, cfg: ModelConfig, train: bool, rng: np.random.Generator | None):
        if train and rng is None:
            rng = np.random.default_rng(cfg.seed)
        self.train = train
        self.rng = rng
        self.p_attn = cfg.dropout_attn
        self.p_other = cfg.dropout_other

    def drop(self, x: Tensor) -> Tensor:
        return nc.dropout(x, self.p_other, self.rng, self.train)


def _ln(state: ModelState, x: Tensor, name: str) -> Tensor:
    return nc.layer_norm(x, state[f"{name}.g"], state[f"{name}.b"], 1e-5)


def _linear(state: ModelState, x: Tensor, w: str, b: str) -> Tensor:
    return nc.add(nc.matmul(x, state[w]), state[b])


def _mha(state: ModelState, prefix: str, xq: Tensor, xkv: Tensor, mask: np.ndarray | None,
         ctx: _Ctx, kv_sink: list | None = None) -> tuple[Tensor, Tensor]:
    cfg = state.config
    h, dh = cfg.heads, cfg.model_dim // cfg.heads
    b, tq, d = xq.shape
    tk = xkv.shape[1]

    def split(t, n):
        return nc.transpose(nc.reshape(t, (b, n, h, dh)), (0, 2, 1, 3))

    q = split(_linear(state, xq, f"{prefix}.wq", f"{prefix}.bq"), tq)
    k = split(_linear(state, xkv, f"{prefix}.wk", f"{prefix}.bk"), tk)
    v = split(_linear(state, xkv, f"{prefix}.wv", f"{prefix}.bv"), tk)
    if kv_sink is not None:
        kv_sink.append((k.data, v.data))
    out, weights = nc.attention(q, k, v, mask, ctx.p_attn, ctx.rng, ctx.train)
    out = nc.reshape(nc.transpose(out, (0, 2, 1, 3)), (b, tq, d))
    return _linear(state, out, f"{prefix}.wo", f"{prefix}.bo"), weights


def _ffn(state: ModelState, prefix: str, x: Tensor, ctx: _Ctx) -> Tensor:
    hdn = nc.relu(_linear(state, x, f"{prefix}.ff.w1", f"{prefix}.ff.b1"))
    return _linear(state, ctx.drop(hdn), f"{prefix}.ff.w2", f"{prefix}.ff.b2")


def _class_ids(classes: Sequence[Verbosity | None], length: int) -> np.ndarray:
    return np.repeat(np.array([[c.index] for c in classes], dtype=np.int64), length, axis=1)


def _embed(state: ModelState, ids: np.ndarray, classes, add_table: str | None,
           prepended: bool, ctx: _Ctx) -> Tensor:
    cfg = state.config
    scale = math.sqrt(cfg.model_dim)
    x = nc.embedding(state["emb"], ids)
    if prepended:
        is_verb = np.isin(ids, VERBOSITY_IDS)
        verb_rows = nc.embedding(state["verb"], np.where(is_verb, ids - V_SHORT, 0))
        keep = (~is_verb)[..., None].astype(np.float32)
        x = nc.add(nc.mul_const(x, np.broadcast_to(keep, x.shape)),
                   nc.mul_const(verb_rows, np.broadcast_to(1.0 - keep, x.shape)))
    if add_table is not None:
        x = nc.add(x, nc.embedding(state[add_table], _class_ids(classes, ids.shape[1])))
    x = nc.scale(x, scale)
    x = nc.add_const(x, _positions(cfg, ids.shape[1])[None])
    return ctx.drop(x)


def _check_lengths(cfg: ModelConfig, n: int, what: str) -> None:
    if n > cfg.max_len:
        raise ModelError(f"{what} length {n} exceeds max_len {cfg.max_len}")


def _check_conditioning(cfg: ModelConfig, source_ids: np.ndarray, classes) -> None:
    var = cfg.variant
    if var.prepends:
        first = source_ids[:, 0]
        if not np.isin(first, VERBOSITY_IDS).all():
            raise ModelError(f"variant {var.value} needs a verbosity token at source position 0")
        for c, f in zip(classes, first):
            if c is not None and c.token_id != f:
                raise ModelError(f"verbosity {c.value} disagrees with prepended token id {f}")
    elif np.isin(source_ids, VERBOSITY_IDS).any():
        raise ModelError(f"variant {var.value} does not take verbosity tokens in the source")
    needs_class = var.enc_sum or var.dec_sum or var is Variant.OUTPUT_BIAS
    if needs_class and any(c is None for c in classes):
        raise ModelError(f"variant {var.value} requires a verbosity class")
    if not var.conditioned and any(c is not None for c in classes):
        raise ModelError("the Standard variant takes no verbosity class")


def _resolve_classes(cfg: ModelConfig, source_ids: np.ndarray, classes):
    """For prepend variants the class can be read off the source token."""
    if cfg.variant.prepends:
        tok2cls = {v.token_id: v for v in Verbosity}
        return [c if c is not None else tok2cls.get(int(s)) for c, s in zip(classes, source_ids[:, 0])]
    return list(classes)


def pad_batch(seqs: Sequence[Sequence[int]]) -> np.ndarray:
    n = max(len(s) for s in seqs)
    out = np.full((len(seqs), n), PAD, dtype=np.int64)
    for i, s in enumerate(seqs):
        out[i, :len(s)] = s
    return out


def encode_batch(state: ModelState, src: np.ndarray, classes, ctx: _Ctx) -> tuple[Tensor, np.ndarray]:
    """Encoder states [B,S,d] and the additive key mask [B,1,1,S] for padding."""
    cfg = state.config
    _check_lengths(cfg, src.shape[1], "source")
    mask = np.where(src == PAD, NEG, 0.0).astype(np.float32)[:, None, None, :]
    x = _embed(state, src, classes, "verb" if cfg.variant.enc_sum else None,
               cfg.variant.prepends, ctx)
    for i in range(cfg.layers):
        p = f"enc.{i}"
        h = _ln(state, x, f"{p}.ln1")
        a, _ = _mha(state, f"{p}.self", h, h, mask, ctx)
        x = nc.add(x, ctx.drop(a))
        x = nc.add(x, ctx.drop(_ffn(state, p, _ln(state, x, f"{p}.lnf"), ctx)))
    return _ln(state, x, "enc.ln"), mask


def decode_batch(state: ModelState, tgt_in: np.ndarray, enc: Tensor, src_mask: np.ndarray,
                 classes, ctx: _Ctx, kv_sink: list | None = None) -> tuple[Tensor, Tensor]:
    """Logits [B,T,V] (unmasked) and final-layer cross attention weights [B,H,T,S].

    ``kv_sink`` collects each layer's self-attention keys and values [B,H,T,dh].
    """
    cfg = state.config
    t = tgt_in.shape[1]
    _check_lengths(cfg, t, "target prefix")
    causal = np.triu(np.full((t, t), NEG, dtype=np.float32), k=1)[None, None]
    dec_table = None
    if cfg.variant.dec_sum:
        shared = cfg.share_verbosity_embedding or cfg.variant is not Variant.ENC_TOK_DEC_EMB
        dec_table = "verb" if shared else "verb_dec"
    y = _embed(state, tgt_in, classes, dec_table, False, ctx)
    cross = None
    for i in range(cfg.layers):
        p = f"dec.{i}"
        h = _ln(state, y, f"{p}.ln1")
        a, _ = _mha(state, f"{p}.self", h, h, causal, ctx, kv_sink)
        y = nc.add(y, ctx.drop(a))
        a, cross = _mha(state, f"{p}.cross", _ln(state, y, f"{p}.ln2"), enc, src_mask, ctx)
        y = nc.add(y, ctx.drop(a))
        y = nc.add(y, ctx.drop(_ffn(state, p, _ln(state, y, f"{p}.lnf"), ctx)))
    logits = _linear(state, _ln(state, y, "dec.ln"), "out.w", "out.b")
    if cfg.variant is Variant.OUTPUT_BIAS:
        logits = nc.add(logits, nc.embedding(state["verb_out"], _class_ids(classes, t)))
    return logits, cross


# -- single-sentence API --------------------------------------------------------

def encode(source_ids: Sequence[int], verbosity: Verbosity | None, state: ModelState,
           train_mode: bool = False, rng: np.random.Generator | None = None) -> Tensor:
    """Encoder states [len, model_dim] for one source sequence."""
    src = np.asarray([list(source_ids)], dtype=np.int64)
    _check_conditioning(state.config, src, [verbosity])
    classes = _resolve_classes(state.config, src, [verbosity])
    enc, _ = encode_batch(state, src, classes, _Ctx(state.config, train_mode, rng))
    return nc.reshape(enc, enc.shape[1:])


def mask_logits(logits: np.ndarray) -> np.ndarray:
    out = np.array(logits, dtype=np.float64)
    out[..., list(BANNED_OUTPUTS)] = -np.inf
    return out


def decode_step(prefix_ids: Sequence[int], encoder_states: Tensor, verbosity: Verbosity | None,
                state: ModelState, train_mode: bool = False,
                rng: np.random.Generator | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Masked next-token logits [V] and cross attention [S] for the last prefix position."""
    if not prefix_ids or prefix_ids[0] != BOS:
        raise ModelError("decoder prefix must start with BOS")
    cfg = state.config
    if cfg.variant.conditioned and cfg.variant is not Variant.ENC_TOK and verbosity is None:
        raise ModelError(f"variant {cfg.variant.value} requires a verbosity class")
    if not cfg.variant.conditioned and verbosity is not None:
        raise ModelError("the Standard variant takes no verbosity class")
    enc = nc.reshape(encoder_states, (1,) + encoder_states.shape)
    src_mask = np.zeros((1, 1, 1, encoder_states.shape[0]), dtype=np.float32)
    logits, cross = decode_batch(state, np.asarray([list(prefix_ids)], dtype=np.int64), enc,
                                 src_mask, [verbosity], _Ctx(cfg, train_mode, rng))
    return mask_logits(logits.data[0, -1]), cross.data[0].mean(axis=0)[-1]


def batch_arrays(batch: Sequence[TaggedPair]) -> tuple[np.ndarray, np.ndarray, np.ndarray, list]:
    src = pad_batch([p.source_ids for p in batch])
    tgt_in = pad_batch([[BOS] + p.target_ids for p in batch])
    tgt_out = pad_batch([p.target_ids + [EOS] for p in batch])
    return src, tgt_in, tgt_out, [p.verbosity for p in batch]


def forward_loss(batch: Sequence[TaggedPair], state: ModelState, train_mode: bool = False,
                 rng: np.random.Generator | None = None) -> Tensor:
    """Teacher-forced, pad-masked mean token cross entropy of a batch."""
    if not batch:
        raise ModelError("empty batch")
    cfg = state.config
    src, tgt_in, tgt_out, classes = batch_arrays(batch)
    if not cfg.variant.conditioned:
        classes = [None] * len(batch)
    elif not cfg.variant.prepends and any(c is None for c in classes):
        raise ModelError(f"variant {cfg.variant.value} needs every pair to carry a verbosity class")
    if cfg.variant.prepends:
        classes = _resolve_classes(cfg, src, [None] * len(batch))
        if cfg.variant.dec_sum:
            explicit = [p.verbosity for p in batch]
            if any(e is not None and e is not c for e, c in zip(explicit, classes)):
                raise ModelError("prepended token and verbosity class disagree")
    _check_conditioning(cfg, src, classes)
    ctx = _Ctx(cfg, train_mode, rng)
    enc, mask = encode_batch(state, src, classes, ctx)
    logits, _ = decode_batch(state, tgt_in, enc, mask, classes, ctx)
    return nc.cross_entropy(logits, tgt_out, PAD, BANNED_OUTPUTS)


class ModelScorer:
    """Next-token log-probabilities for batches of prefixes of one source sentence.

    The encoder and the cross-attention projections run once. Self-attention keys
    and values of the previous call's prefixes are cached, so a call whose every
    prefix extends one of them only computes the newest position; anything else
    falls back to a full decoder pass.
    """

    def __init__(self, state: ModelState, source_ids: Sequence[int], verbosity: Verbosity | None,
                 incremental: bool = True):
        self.state = state
        self.source_ids = list(source_ids)
        self.incremental = incremental
        cfg = state.config
        src = np.asarray([self.source_ids], dtype=np.int64)
        _check_conditioning(cfg, src, [verbosity])
        self.classes = _resolve_classes(cfg, src, [verbosity])
        self._ctx = _Ctx(cfg, False, None)
        with nc.no_grad():
            enc, _ = encode_batch(state, src, self.classes, self._ctx)
            self.enc = enc.data
            h, dh = cfg.heads, cfg.model_dim // cfg.heads
            s = self.enc.shape[1]
            self._cross = []
            for i in range(cfg.layers):
                k = _linear(state, enc, f"dec.{i}.cross.wk", f"dec.{i}.cross.bk").data
                v = _linear(state, enc, f"dec.{i}.cross.wv", f"dec.{i}.cross.bv").data
                self._cross.append((k.reshape(1, s, h, dh).transpose(0, 2, 1, 3),
                                    v.reshape(1, s, h, dh).transpose(0, 2, 1, 3)))
        self.vocab_size = cfg.vocab_size
        self._cache: dict[tuple[int, ...], list[tuple[np.ndarray, np.ndarray]]] = {}

    def __call__(self, prefixes: Sequence[Sequence[int]]) -> tuple[np.ndarray, np.ndarray]:
        keys = [tuple(int(x) for x in p) for p in prefixes]
        if len({len(k) for k in keys}) != 1:
            raise ModelError("prefixes in one call must have equal length")
        parents = [self._cache.get(k[:-1]) for k in keys] if len(keys[0]) > 1 else [None]
        with nc.no_grad():
            if self.incremental and all(p is not None for p in parents):
                logits, attn, kv = self._step(keys, parents)
            else:
                logits, attn, kv = self._full(keys)
        self._cache = {k: [(kl[i], vl[i]) for kl, vl in kv] for i, k in enumerate(keys)}
        return nc.log_softmax_np(logits, BANNED_OUTPUTS), attn

    def _full(self, keys):
        n = len(keys)
        tgt = np.asarray(keys, dtype=np.int64)
        enc = Tensor(np.broadcast_to(self.enc, (n,) + self.enc.shape[1:]))
        mask = np.zeros((n, 1, 1, self.enc.shape[1]), dtype=np.float32)
        sink: list = []
        logits, cross = decode_batch(self.state, tgt, enc, mask, self.classes * n, self._ctx, sink)
        return logits.data[:, -1], cross.data.mean(axis=1)[:, -1], sink

    def _step(self, keys, parents):
        state, cfg = self.state, self.state.config
        n, t = len(keys), len(keys[0])
        _check_lengths(cfg, t, "target prefix")
        h, dh, d = cfg.heads, cfg.model_dim // cfg.heads, cfg.model_dim
        last = np.asarray([[k[-1]] for k in keys], dtype=np.int64)
        x = state["emb"].data[last]
        if cfg.variant.dec_sum:
            shared = cfg.share_verbosity_embedding or cfg.variant is not Variant.ENC_TOK_DEC_EMB
            x = x + state["verb" if shared else "verb_dec"].data[self.classes[0].index]
        y = Tensor(x * np.float32(math.sqrt(d)) + _positions(cfg, t)[t - 1])

        def heads(z):
            return Tensor(z.data.reshape(n, 1, h, dh).transpose(0, 2, 1, 3))

        def merge(z):
            return Tensor(z.data.transpose(0, 2, 1, 3).reshape(n, 1, d))

        sink, cross = [], None
        for i in range(cfg.layers):
            p = f"dec.{i}"
            hid = _ln(state, y, f"{p}.ln1")
            q = heads(_linear(state, hid, f"{p}.self.wq", f"{p}.self.bq"))
            k_new = heads(_linear(state, hid, f"{p}.self.wk", f"{p}.self.bk")).data
            v_new = heads(_linear(state, hid, f"{p}.self.wv", f"{p}.self.bv")).data
            k_all = np.concatenate([np.stack([pa[i][0] for pa in parents]), k_new], axis=2)
            v_all = np.concatenate([np.stack([pa[i][1] for pa in parents]), v_new], axis=2)
            sink.append((k_all, v_all))
            a, _ = nc.attention(q, Tensor(k_all), Tensor(v_all))
            y = nc.add(y, _linear(state, merge(a), f"{p}.self.wo", f"{p}.self.bo"))
            q = heads(_linear(state, _ln(state, y, f"{p}.ln2"), f"{p}.cross.wq", f"{p}.cross.bq"))
            ck, cv = self._cross[i]
            s = ck.shape[2]
            a, cross = nc.attention(q, Tensor(np.broadcast_to(ck, (n, h, s, dh))),
                                    Tensor(np.broadcast_to(cv, (n, h, s, dh))))
            y = nc.add(y, _linear(state, merge(a), f"{p}.cross.wo", f"{p}.cross.bo"))
            y = nc.add(y, _ffn(state, p, _ln(state, y, f"{p}.lnf"), self._ctx))
        logits = _linear(state, _ln(state, y, "dec.ln"), "out.w", "out.b").data[:, -1]
        if cfg.variant is Variant.OUTPUT_BIAS:
            logits = logits + state["verb_out"].data[self.classes[0].index]
        return logits, cross.data.mean(axis=1)[:, -1], sink


# -- checkpoints ------------------------------------------------------------------

def save_model(state: ModelState, path: str | Path) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    manifest, offset, chunks = [], len(WEIGHTS_MAGIC), [WEIGHTS_MAGIC]
    for name, _ in param_shapes(state.config):
        arr = np.ascontiguousarray(state[name].data, dtype="<f4")
        manifest.append({"name": name, "shape": list(arr.shape), "offset": offset})
        chunks.append(arr.tobytes())
        offset += arr.nbytes
    meta = {"format_version": FORMAT_VERSION, **state.config.to_json(),
            "vocabulary": state.vocab.to_list(), "manifest": manifest, "total_bytes": offset}
    (path / "weights.bin").write_bytes(b"".join(chunks))
    (path / "config.json").write_text(json.dumps(meta, indent=1, ensure_ascii=False) + "\n",
                                      encoding="utf-8")


def load_model(path: str | Path, expect_variant: Variant | str | None = None) -> ModelState:
    path = Path(path)
    try:
        meta = json.loads((path / "config.json").read_text(encoding="utf-8"))
        raw = (path / "weights.bin").read_bytes()
    except (OSError, json.JSONDecodeError) as err:
        raise CheckpointError(f"cannot read checkpoint at {path}: {err}") from None
    if meta.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint format_version {meta.get('format_version')}")
    if not raw.startswith(WEIGHTS_MAGIC):
        raise CheckpointError(f"{path / 'weights.bin'}: bad magic bytes")
    if len(raw) != meta.get("total_bytes"):
        raise CheckpointError(f"{path / 'weights.bin'}: expected {meta.get('total_bytes')} bytes, "
                              f"found {len(raw)} (truncated?)")
    cfg = ModelConfig.from_json(meta)
    if expect_variant is not None and Variant(expect_variant) is not cfg.variant:
        raise CheckpointError(f"checkpoint variant {cfg.variant.value} does not match requested "
                              f"{Variant(expect_variant).value}")
    vocab = Vocabulary.from_list(meta["vocabulary"])
    entries = {e["name"]: e for e in meta["manifest"]}
    params = {}
    for name, shape in param_shapes(cfg):
        e = entries.get(name)
        if e is None or tuple(e["shape"]) != shape:
            raise CheckpointError(f"manifest entry for {name} missing or has wrong shape")
        n = int(np.prod(shape))
        arr = np.frombuffer(raw, dtype="<f4", count=n, offset=e["offset"]).reshape(shape)
        params[name] = Tensor(arr.astype(np.float32), requires_grad=True, name=name)
    return ModelState(cfg, params, vocab)
