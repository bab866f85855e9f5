"""Miniature teacher-forced encoder-decoder sequence model.

Multi-head attention with causal decoder masking, fixed sinusoidal
positional encoding, post-layer-norm residual blocks, and an optional
small convolutional front-end over 2-d feature maps. Two size profiles:
`ModelConfig.full_scale()` is the realistic configuration (d_model 512,
2 encoder / 4 decoder layers), `ModelConfig.desk()` the test-sized
default that keeps full runs in seconds.

Also holds the regression MLP used by the sinusoid task family and the
binary checkpoint format shared with the CLI harness.
"""

import math
import struct
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, ContractError, ShapeError

CHECKPOINT_MAGIC = b"MSLCKPT1"

NEG_MASK = -1e9  # additive attention mask; finite so activations never hold inf


@dataclass
class ModelConfig:
    d_model: int = 32
    n_heads: int = 4
    d_k: int = 8
    d_v: int = 8
    d_ff: int = 64
    n_encoder_layers: int = 1
    n_decoder_layers: int = 1
    dropout: float = 0.0
    src_vocab: int = 23
    tgt_vocab: int = 23
    max_len: int = 24
    conv_extractor: tuple | None = None  # (n_layers, channels) over feature maps
    conv_feat_bins: int = 8

    def __post_init__(self):
        for name in ("d_model", "n_heads", "d_k", "d_v", "d_ff",
                     "n_encoder_layers", "n_decoder_layers",
                     "src_vocab", "tgt_vocab", "max_len"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.max_len < 2:
            raise ConfigError("max_len must be at least 2 (BOS plus one token)")
        if self.conv_extractor is not None:
            n_layers, channels = self.conv_extractor
            if n_layers < 1 or channels < 1 or self.conv_feat_bins < 1:
                raise ConfigError("conv extractor needs positive layer/channel/bin counts")

    @classmethod
    def desk(cls, src_vocab=23, tgt_vocab=23, max_len=24, **kw):
        return cls(src_vocab=src_vocab, tgt_vocab=tgt_vocab, max_len=max_len, **kw)

    @classmethod
    def full_scale(cls, src_vocab, tgt_vocab, max_len):
        return cls(d_model=512, n_heads=8, d_k=64, d_v=64, d_ff=2048,
                   n_encoder_layers=2, n_decoder_layers=4, dropout=0.1,
                   src_vocab=src_vocab, tgt_vocab=tgt_vocab, max_len=max_len)


class ParamSet:
    """Ordered name -> Tensor map; iteration order is insertion order."""

    __slots__ = ("_d",)

    def __init__(self, items=None):
        self._d = {}
        if items:
            for name, t in items:
                self.add(name, t)

    def add(self, name, t):
        if name in self._d:
            raise ContractError(f"duplicate parameter name {name!r}")
        self._d[name] = t

    def __getitem__(self, name):
        return self._d[name]

    def __contains__(self, name):
        return name in self._d

    def __len__(self):
        return len(self._d)

    def __iter__(self):
        return iter(self._d)

    def names(self):
        return list(self._d)

    def items(self):
        return self._d.items()

    def clone(self):
        """Deep copy with fresh leaf tensors (requires_grad preserved)."""
        out = ParamSet()
        for name, t in self._d.items():
            c = T.Tensor(t.data.copy(), requires_grad=t.requires_grad)
            out.add(name, c)
        return out

    def updated(self, grads, lr):
        """New ParamSet with values name-wise stepped by -lr * grads[name]."""
        out = ParamSet()
        for name, t in self._d.items():
            g = grads.get(name)
            data = t.data.copy() if g is None else t.data - lr * g
            out.add(name, T.Tensor(np.ascontiguousarray(data), requires_grad=True))
        return out

    def n_values(self):
        return sum(t.data.size for t in self._d.values())


@dataclass
class SequenceBatch:
    """Teacher-forcing batch: BOS-prefixed inputs, EOS-suffixed outputs."""

    src: np.ndarray | None
    tgt_in: np.ndarray
    tgt_out: np.ndarray
    pad_id: int
    bos_id: int
    eos_id: int
    src_features: np.ndarray | None = None  # [B, T, F] for the conv front-end

    def __post_init__(self):
        if self.src is None and self.src_features is None:
            raise ContractError("batch needs src token ids or src_features")
        lead = self.tgt_out[:, :-1]
        real = (lead != self.pad_id) & (lead != self.eos_id)  # EOS is never fed back
        if not np.array_equal(self.tgt_in[:, 1:][real], lead[real]):
            raise ContractError("tgt_in is not the shifted-by-one view of tgt_out")

    def n_sequences(self):
        return self.tgt_in.shape[0]


def make_sequence_batch(src_seqs, tgt_seqs, pad_id, bos_id, eos_id):
    """Pad variable-length id sequences into an aligned SequenceBatch."""
    b = len(src_seqs)
    s_len = max(len(s) for s in src_seqs)
    t_len = max(len(t) for t in tgt_seqs) + 1  # room for BOS/EOS
    src = np.full((b, s_len), pad_id, dtype=np.int64)
    tgt_in = np.full((b, t_len), pad_id, dtype=np.int64)
    tgt_out = np.full((b, t_len), pad_id, dtype=np.int64)
    for i, (s, t) in enumerate(zip(src_seqs, tgt_seqs)):
        src[i, :len(s)] = s
        tgt_in[i, 0] = bos_id
        tgt_in[i, 1:len(t) + 1] = t
        tgt_out[i, :len(t)] = t
        tgt_out[i, len(t)] = eos_id
    return SequenceBatch(src, tgt_in, tgt_out, pad_id, bos_id, eos_id)


# ---------------------------------------------------------------------------
# initialization

_pe_cache = {}


def positional_encoding(max_len, d_model):
    key = (max_len, d_model)
    pe = _pe_cache.get(key)
    if pe is None:
        pos = np.arange(max_len)[:, None]
        i = np.arange(d_model)[None, :]
        angle = pos / np.power(10000.0, (2 * (i // 2)) / d_model)
        pe = np.where(i % 2 == 0, np.sin(angle), np.cos(angle))
        _pe_cache[key] = pe
    return pe


def _uniform(rng, shape, fan_in):
    s = 1.0 / math.sqrt(fan_in)
    return T.Tensor(rng.uniform(-s, s, size=shape), requires_grad=True)


def _zeros(shape):
    return T.Tensor(np.zeros(shape), requires_grad=True)


def _ones(shape):
    return T.Tensor(np.ones(shape), requires_grad=True)


def init_params(cfg, seed):
    """Scaled-uniform weights (1/sqrt(fan_in)), zero biases, unit LN gains.

    Deterministic: a single seeded generator drawn in insertion order.
    """
    rng = np.random.default_rng(seed)
    p = ParamSet()
    d = cfg.d_model

    def attn_block(prefix):
        p.add(f"{prefix}.wq", _uniform(rng, (d, cfg.n_heads * cfg.d_k), d))
        p.add(f"{prefix}.bq", _zeros(cfg.n_heads * cfg.d_k))
        p.add(f"{prefix}.wk", _uniform(rng, (d, cfg.n_heads * cfg.d_k), d))
        p.add(f"{prefix}.bk", _zeros(cfg.n_heads * cfg.d_k))
        p.add(f"{prefix}.wv", _uniform(rng, (d, cfg.n_heads * cfg.d_v), d))
        p.add(f"{prefix}.bv", _zeros(cfg.n_heads * cfg.d_v))
        p.add(f"{prefix}.wo", _uniform(rng, (cfg.n_heads * cfg.d_v, d), cfg.n_heads * cfg.d_v))
        p.add(f"{prefix}.bo", _zeros(d))
        p.add(f"{prefix}.ln_g", _ones(d))
        p.add(f"{prefix}.ln_b", _zeros(d))

    def ff_block(prefix):
        p.add(f"{prefix}.w1", _uniform(rng, (d, cfg.d_ff), d))
        p.add(f"{prefix}.b1", _zeros(cfg.d_ff))
        p.add(f"{prefix}.w2", _uniform(rng, (cfg.d_ff, d), cfg.d_ff))
        p.add(f"{prefix}.b2", _zeros(d))
        p.add(f"{prefix}.ln_g", _ones(d))
        p.add(f"{prefix}.ln_b", _zeros(d))

    if cfg.conv_extractor is not None:
        n_layers, channels = cfg.conv_extractor
        c_in = 1
        for i in range(n_layers):
            p.add(f"conv{i}.w", _uniform(rng, (channels, c_in, 3, 3), c_in * 9))
            p.add(f"conv{i}.b", _zeros(channels))
            c_in = channels
        p.add("conv_proj.w", _uniform(rng, (channels * cfg.conv_feat_bins, d),
                                      channels * cfg.conv_feat_bins))
        p.add("conv_proj.b", _zeros(d))
    else:
        p.add("src_embed", _uniform(rng, (cfg.src_vocab, d), d))
    p.add("tgt_embed", _uniform(rng, (cfg.tgt_vocab, d), d))
    for i in range(cfg.n_encoder_layers):
        attn_block(f"enc{i}.attn")
        ff_block(f"enc{i}.ff")
    for i in range(cfg.n_decoder_layers):
        attn_block(f"dec{i}.self")
        attn_block(f"dec{i}.cross")
        ff_block(f"dec{i}.ff")
    p.add("out.w", _uniform(rng, (d, cfg.tgt_vocab), d))
    p.add("out.b", _zeros(cfg.tgt_vocab))
    return p


# ---------------------------------------------------------------------------
# forward pass


class _Dropper:
    """Per-call seeded dropout masks; inert when rate is 0 or eval mode."""

    def __init__(self, rate, active, base_seed):
        self.rate = rate
        self.active = active and rate > 0.0
        self.base = base_seed if isinstance(base_seed, tuple) else (base_seed,)
        self.n = 0

    def __call__(self, x):
        if not self.active:
            return x
        self.n += 1
        return T.dropout(x, self.rate, (*self.base, self.n))


def _attention(params, prefix, q_in, kv_in, mask, cfg):
    h = cfg.n_heads
    q = T.split_heads(T.linear(q_in, params[f"{prefix}.wq"], params[f"{prefix}.bq"]), h)
    k = T.split_heads(T.linear(kv_in, params[f"{prefix}.wk"], params[f"{prefix}.bk"]), h)
    v = T.split_heads(T.linear(kv_in, params[f"{prefix}.wv"], params[f"{prefix}.bv"]), h)
    scores = T.scale(T.bmm(q, k, transpose_b=True), 1.0 / math.sqrt(cfg.d_k))
    attn = T.softmax_rows(scores, additive_mask=mask)
    ctx = T.merge_heads(T.bmm(attn, v), h)
    return T.linear(ctx, params[f"{prefix}.wo"], params[f"{prefix}.bo"])


def _residual_norm(params, prefix, x, sub_out):
    return T.layer_norm(T.add(x, sub_out), params[f"{prefix}.ln_g"], params[f"{prefix}.ln_b"])


def _ff(params, prefix, x, drop):
    hidden = T.relu(T.linear(x, params[f"{prefix}.w1"], params[f"{prefix}.b1"]))
    out = drop(T.linear(hidden, params[f"{prefix}.w2"], params[f"{prefix}.b2"]))
    return _residual_norm(params, prefix, x, out)


def _pad_key_mask(ids, pad_id, n_heads):
    """[B, T] ids -> [B*H, 1, T] additive mask blocking pad keys."""
    m = np.where(ids == pad_id, NEG_MASK, 0.0)[:, None, :]
    return np.repeat(m, n_heads, axis=0)


def _add_const(x, const):
    c = np.ascontiguousarray(np.broadcast_to(const, x.data.shape))
    return T.add(x, T.Tensor(c))


def _embed_tokens(params, table_name, ids, cfg, drop):
    x = T.scale(T.embedding(params[table_name], ids), math.sqrt(cfg.d_model))
    pe = positional_encoding(cfg.max_len, cfg.d_model)[:ids.shape[1]]
    return drop(_add_const(x, pe))


def _conv_front_end(params, feats, cfg, drop):
    n_layers, channels = cfg.conv_extractor
    b, t, f = feats.shape
    if f != cfg.conv_feat_bins:
        raise ShapeError(f"feature bins {f} != configured conv_feat_bins {cfg.conv_feat_bins}")
    x = T.reshape(T.Tensor(feats), (b, 1, t, f))
    for i in range(n_layers):
        x = T.relu(T.conv2d(x, params[f"conv{i}.w"], params[f"conv{i}.b"]))
    x = T.reshape(T.transpose(x, (0, 2, 1, 3)), (b, t, channels * f))
    x = T.linear(x, params["conv_proj.w"], params["conv_proj.b"])
    pe = positional_encoding(cfg.max_len, cfg.d_model)[:t]
    return drop(_add_const(x, pe))


def _encode(cfg, params, batch, drop):
    if cfg.conv_extractor is not None:
        if batch.src_features is None:
            raise ContractError("conv extractor configured but batch has no src_features")
        x = _conv_front_end(params, batch.src_features, cfg, drop)
        src_len = batch.src_features.shape[1]
        src_mask = None
    else:
        src = batch.src
        src_len = src.shape[1]
        if src_len > cfg.max_len:
            raise ShapeError(f"source length {src_len} exceeds max_len {cfg.max_len}")
        x = _embed_tokens(params, "src_embed", src, cfg, drop)
        src_mask = _pad_key_mask(src, batch.pad_id, cfg.n_heads)
    for i in range(cfg.n_encoder_layers):
        attn = drop(_attention(params, f"enc{i}.attn", x, x, src_mask, cfg))
        x = _residual_norm(params, f"enc{i}.attn", x, attn)
        x = _ff(params, f"enc{i}.ff", x, drop)
    return x, src_mask


def _decode(cfg, params, enc_out, src_mask, tgt_in, pad_id, drop):
    t_len = tgt_in.shape[1]
    if t_len > cfg.max_len:
        raise ShapeError(f"target length {t_len} exceeds max_len {cfg.max_len}")
    y = _embed_tokens(params, "tgt_embed", tgt_in, cfg, drop)
    causal = np.triu(np.full((t_len, t_len), NEG_MASK), k=1)
    self_mask = causal + _pad_key_mask(tgt_in, pad_id, cfg.n_heads)
    for i in range(cfg.n_decoder_layers):
        attn = drop(_attention(params, f"dec{i}.self", y, y, self_mask, cfg))
        y = _residual_norm(params, f"dec{i}.self", y, attn)
        cross = drop(_attention(params, f"dec{i}.cross", y, enc_out, src_mask, cfg))
        y = _residual_norm(params, f"dec{i}.cross", y, cross)
        y = _ff(params, f"dec{i}.ff", y, drop)
    return T.linear(y, params["out.w"], params["out.b"])


def forward_logits(cfg, params, batch, train_mode=False, dropout_seed=0):
    """Teacher-forced logits [B, T, tgt_vocab] for every target position."""
    drop = _Dropper(cfg.dropout, train_mode, dropout_seed)
    enc_out, src_mask = _encode(cfg, params, batch, drop)
    return _decode(cfg, params, enc_out, src_mask, batch.tgt_in, batch.pad_id, drop)


def sequence_nll(cfg, params, batch, train_mode=False, dropout_seed=0):
    """Mean negative log-likelihood over non-pad target positions (scalar)."""
    logits = forward_logits(cfg, params, batch, train_mode, dropout_seed)
    b, t, v = logits.data.shape
    flat = T.reshape(logits, (b * t, v))
    return T.cross_entropy(flat, batch.tgt_out.reshape(-1), ignore_index=batch.pad_id)


# ---------------------------------------------------------------------------
# decoding


def _log_softmax(row):
    m = row.max()
    s = row - m
    return s - math.log(np.exp(s).sum())


def _steps_bound(cfg, max_steps):
    if max_steps < 1 or max_steps > cfg.max_len - 1:
        raise ContractError(f"max_steps must be in [1, {cfg.max_len - 1}], got {max_steps}")


def _encode_only(cfg, params, src, pad_id):
    batch = SequenceBatch(src, np.full((src.shape[0], 1), 1, dtype=np.int64),
                          np.full((src.shape[0], 1), 1, dtype=np.int64),
                          pad_id=pad_id, bos_id=1, eos_id=2)
    drop = _Dropper(0.0, False, 0)
    return _encode(cfg, params, batch, drop)


def greedy_decode(cfg, params, src, max_steps, pad_id=0, bos_id=1, eos_id=2):
    """Argmax decoding; ties go to the lowest token id; stops on EOS."""
    _steps_bound(cfg, max_steps)
    src = np.asarray(src, dtype=np.int64)
    b = src.shape[0]
    enc_out, src_mask = _encode_only(cfg, params, src, pad_id)
    drop = _Dropper(0.0, False, 0)
    outs = [[] for _ in range(b)]
    alive = np.ones(b, dtype=bool)
    tgt_in = np.full((b, 1), bos_id, dtype=np.int64)
    for _ in range(max_steps):
        logits = _decode(cfg, params, enc_out, src_mask, tgt_in, pad_id, drop)
        nxt = logits.data[:, -1, :].argmax(axis=1)
        for i in range(b):
            if alive[i]:
                if nxt[i] == eos_id:
                    alive[i] = False
                else:
                    outs[i].append(int(nxt[i]))
        if not alive.any():
            break
        step_tok = np.where(alive, nxt, pad_id)
        tgt_in = np.concatenate([tgt_in, step_tok[:, None]], axis=1)
    return outs


def _score_sequence(cfg, params, enc_out, src_mask, tokens, pad_id, bos_id, eos_id,
                    ended_with_eos):
    """Cumulative log-probability of emitting `tokens` (and EOS if it ended)."""
    drop = _Dropper(0.0, False, 0)
    tgt_in = np.array([[bos_id] + list(tokens)], dtype=np.int64)
    logits = _decode(cfg, params, enc_out, src_mask, tgt_in, pad_id, drop).data[0]
    score = 0.0
    for t, tok in enumerate(tokens):
        score += _log_softmax(logits[t])[tok]
    if ended_with_eos:
        score += _log_softmax(logits[len(tokens)])[eos_id]
    return float(score)


def beam_decode(cfg, params, src, beam_size, max_steps, pad_id=0, bos_id=1, eos_id=2):
    """Highest cumulative-log-probability hypothesis under beam expansion.

    No length normalization; score ties break toward the lexicographically
    smaller token path. The greedy hypothesis always competes in the final
    selection, so the result never scores below greedy.
    """
    if not isinstance(beam_size, int) or beam_size < 1:
        raise ContractError(f"beam_size must be a positive integer, got {beam_size}")
    _steps_bound(cfg, max_steps)
    src = np.asarray(src, dtype=np.int64)
    results = []
    greedy_all = greedy_decode(cfg, params, src, max_steps, pad_id, bos_id, eos_id)
    for b in range(src.shape[0]):
        enc_out, src_mask = _encode_only(cfg, params, src[b:b + 1], pad_id)
        drop = _Dropper(0.0, False, 0)
        completed = []
        alive = [((), 0.0)]
        for step in range(max_steps):
            tgt_in = np.array([[bos_id] + list(toks) for toks, _ in alive], dtype=np.int64)
            n = len(alive)
            enc_rep = T.Tensor(np.repeat(enc_out.data, n, axis=0))
            mask_rep = None if src_mask is None else np.repeat(src_mask, n, axis=0)
            logits = _decode(cfg, params, enc_rep, mask_rep, tgt_in, pad_id, drop).data
            candidates = []
            for i, (toks, s) in enumerate(alive):
                logp = _log_softmax(logits[i, step])
                for v in range(cfg.tgt_vocab):
                    candidates.append((toks, v, s + float(logp[v])))
            # EOS competes for beam slots; surviving EOS children retire
            candidates.sort(key=lambda c: (-c[2], c[0] + (c[1],)))
            alive = []
            for toks, v, ns in candidates[:beam_size]:
                if v == eos_id:
                    completed.append((toks, ns))
                else:
                    alive.append((toks + (v,), ns))
            if not alive:
                break
        completed.extend(alive)  # forced stop at max_steps
        g_toks = tuple(greedy_all[b])
        g_ended = len(g_toks) < max_steps
        g_score = _score_sequence(cfg, params, enc_out, src_mask, g_toks,
                                  pad_id, bos_id, eos_id, g_ended)
        completed.append((g_toks, g_score))
        completed.sort(key=lambda c: (-c[1], c[0]))
        results.append(list(completed[0][0]))
    return results


# ---------------------------------------------------------------------------
# regression MLP (sinusoid task family)


def init_mlp_params(sizes, seed):
    """Fully-connected relu MLP parameters, same init rule as the model."""
    rng = np.random.default_rng(seed)
    p = ParamSet()
    for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        p.add(f"mlp{i}.w", _uniform(rng, (fan_in, fan_out), fan_in))
        p.add(f"mlp{i}.b", _zeros(fan_out))
    return p


def mlp_forward(params, x):
    n_layers = sum(1 for name in params if name.endswith(".w"))
    h = x if isinstance(x, T.Tensor) else T.Tensor(x)
    for i in range(n_layers):
        h = T.linear(h, params[f"mlp{i}.w"], params[f"mlp{i}.b"])
        if i < n_layers - 1:
            h = T.relu(h)
    return h


def mse_loss(pred, target):
    diff = T.sub(pred, target if isinstance(target, T.Tensor) else T.Tensor(target))
    return T.mean_all(T.mul(diff, diff))


# ---------------------------------------------------------------------------
# checkpoint format (shared with the CLI harness)


def save_params(path, params):
    """MSLCKPT1: magic, then (u32 name len, name, u32 rank, u32 dims..., f64 LE)."""
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        for name, t in params.items():
            nb = name.encode("utf-8")
            f.write(struct.pack("<I", len(nb)))
            f.write(nb)
            f.write(struct.pack("<I", t.data.ndim))
            f.write(struct.pack(f"<{t.data.ndim}I", *t.data.shape))
            f.write(t.data.astype("<f8").tobytes())


def load_params(path):
    with open(path, "rb") as f:
        magic = f.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise ConfigError(f"bad checkpoint magic {magic!r} in {path}")
        params = ParamSet()
        while True:
            head = f.read(4)
            if not head:
                break
            if len(head) < 4:
                raise ConfigError(f"truncated checkpoint {path}")
            (name_len,) = struct.unpack("<I", head)
            name = f.read(name_len).decode("utf-8")
            (rank,) = struct.unpack("<I", f.read(4))
            dims = struct.unpack(f"<{rank}I", f.read(4 * rank))
            n = int(np.prod(dims)) if dims else 1
            raw = f.read(8 * n)
            if len(raw) < 8 * n:
                raise ConfigError(f"truncated checkpoint {path}")
            data = np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(dims)
            params.add(name, T.Tensor(data, requires_grad=True))
    return params
