"""Transformer encoders: dense attention over chunks and sliding-window
sparse attention over long sequences, both exposing the position-0 [CLS]
vector as the sequence representation.

The sparse path is banded: per-token scores are computed only against the
2w+1 window and the global token set, never materializing an L x L score
matrix. A dense pass on the same weights serves as its correctness oracle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .corpus import CLS_ID, PAD_ID


@dataclass
class EncoderConfig:
    vocab_size: int
    dim: int = 64
    layers: int = 2
    heads: int = 4
    ff: int = 128
    max_positions: int = 129
    dropout: float = 0.1
    attention: str = "dense"  # dense | sliding
    window: int = 16
    global_tokens: tuple = (0,)

    def validate(self):
        if self.dim % self.heads != 0:
            raise ValueError(f"dim {self.dim} not divisible by heads {self.heads}")
        if self.attention not in ("dense", "sliding"):
            raise ValueError(f"unknown attention mode '{self.attention}'")
        if self.attention == "sliding":
            if self.window < 1:
                raise ValueError(f"window must be >= 1, got {self.window}")
            g = tuple(sorted(self.global_tokens))
            if g != tuple(range(len(g))) or 0 not in g:
                raise ValueError("global tokens must be a prefix {0..G-1} including CLS")


def _trunc_normal(rng, shape, std=0.02):
    x = rng.standard_normal(shape)
    for _ in range(8):
        bad = np.abs(x) > 2.0
        if not bad.any():
            break
        x[bad] = rng.standard_normal(bad.sum())
    np.clip(x, -2.0, 2.0, out=x)
    return (x * std).astype(np.float32)


def init_params(config, seed):
    """Truncated-normal weights (std 0.02), layer-norm scale 1 / shift 0."""
    config.validate()
    rng = np.random.default_rng(seed)
    d, f = config.dim, config.ff
    p = {}

    def w(name, shape):
        p[name] = T.parameter(_trunc_normal(rng, shape), name=name)

    def zeros(name, shape):
        p[name] = T.parameter(np.zeros(shape, dtype=np.float32), name=name)

    def ones(name, shape):
        p[name] = T.parameter(np.ones(shape, dtype=np.float32), name=name)

    w("tok_emb", (config.vocab_size, d))
    w("pos_emb", (config.max_positions, d))
    for i in range(config.layers):
        pre = f"layer{i}."
        for proj in ("q", "k", "v", "o"):
            w(pre + proj + "_w", (d, d))
            zeros(pre + proj + "_b", (d,))
        w(pre + "ff1_w", (d, f))
        zeros(pre + "ff1_b", (f,))
        w(pre + "ff2_w", (f, d))
        zeros(pre + "ff2_b", (d,))
        ones(pre + "ln1_g", (d,))
        zeros(pre + "ln1_b", (d,))
        ones(pre + "ln2_g", (d,))
        zeros(pre + "ln2_b", (d,))
    ones("lnf_g", (d,))
    zeros("lnf_b", (d,))
    return p


def _linear(x, params, name):
    return T.add(T.matmul(x, params[name + "_w"]), params[name + "_b"])


def _split_heads(x, heads):
    b, l, d = x.shape
    dh = d // heads
    return T.transpose(T.reshape(x, (b, l, heads, dh)), (0, 2, 1, 3))  # (B,H,L,dh)


def _merge_heads(x):
    b, h, l, dh = x.shape
    return T.reshape(T.transpose(x, (0, 2, 1, 3)), (b, l, h * dh))


def _attend_dense(q, k, v, key_mask):
    dh = q.shape[-1]
    scores = T.scale(T.matmul(q, T.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(dh))
    mask = key_mask[:, None, None, :]  # broadcast over heads and query rows
    probs = T.softmax(scores, mask=mask)
    return T.matmul(probs, v), probs


def _attend_sliding(q, k, v, key_mask, window, global_idx, capture=None):
    """Banded attention: each row sees its 2w+1 window plus the global set;
    global rows see everything."""
    b, h, l, dh = q.shape
    w = window
    g = len(global_idx)
    scale = 1.0 / math.sqrt(dh)

    ar = np.arange(l)
    offs = np.arange(-w, w + 1)
    raw = ar[:, None] + offs[None, :]           # (L, 2w+1)
    band_idx = np.clip(raw, 0, l - 1)
    in_range = (raw >= 0) & (raw < l)
    not_global = ~np.isin(band_idx, global_idx)  # global keys live in their own columns
    band_key_ok = key_mask[:, band_idx]          # (B, L, 2w+1)
    band_valid = in_range[None] & not_global[None] & band_key_ok

    k_band = T.reshape(T.index_select(k, 2, band_idx.reshape(-1)), (b, h, l, 2 * w + 1, dh))
    v_band = T.reshape(T.index_select(v, 2, band_idx.reshape(-1)), (b, h, l, 2 * w + 1, dh))
    q5 = T.reshape(q, (b, h, l, 1, dh))
    band_scores = T.scale(T.sum_(T.mul(q5, k_band), axis=-1), scale)  # (B,H,L,2w+1)

    gidx = np.asarray(global_idx)
    kg = T.index_select(k, 2, gidx)   # (B,H,G,dh)
    vg = T.index_select(v, 2, gidx)
    glob_scores = T.scale(T.matmul(q, T.transpose(kg, (0, 1, 3, 2))), scale)  # (B,H,L,G)
    glob_valid = key_mask[:, gidx]    # (B, G)

    scores = T.concat([band_scores, glob_scores], axis=-1)
    valid = np.concatenate(
        [band_valid[:, None], np.broadcast_to(glob_valid[:, None, None, :], (b, 1, l, g))],
        axis=-1)
    probs = T.softmax(scores, mask=valid)

    band_probs = T.reshape(probs[:, :, :, :2 * w + 1], (b, h, l, 2 * w + 1, 1))
    glob_probs = probs[:, :, :, 2 * w + 1:]
    ctx = T.add(T.sum_(T.mul(band_probs, v_band), axis=3), T.matmul(glob_probs, vg))

    # global rows attend densely over the whole (masked) sequence
    qg = T.index_select(q, 2, gidx)
    g_scores = T.scale(T.matmul(qg, T.transpose(k, (0, 1, 3, 2))), scale)  # (B,H,G,L)
    g_probs = T.softmax(g_scores, mask=key_mask[:, None, None, :])
    g_ctx = T.matmul(g_probs, v)
    ctx = T.concat([g_ctx, ctx[:, :, g:, :]], axis=2)

    if capture is not None:
        capture.append({
            "band_probs": probs.data[:, :, :, :2 * w + 1].copy(),
            "band_idx": band_idx,
            "band_valid": band_valid.copy(),
            "global_probs": probs.data[:, :, :, 2 * w + 1:].copy(),
            "global_idx": gidx,
            "global_row_probs": g_probs.data.copy(),
        })
    return ctx


def encoder_forward(ids, mask, params, config, train=False, rng=None, capture=None):
    """Run the encoder over a batch; returns the (B, L, D) hidden states.

    `ids` is (B, L) int, `mask` is (B, L) bool (true for real tokens incl.
    CLS). Attention never reads masked keys.
    """
    ids = np.atleast_2d(np.asarray(ids))
    mask = np.atleast_2d(np.asarray(mask, dtype=bool))
    b, l = ids.shape
    if l > config.max_positions:
        raise ValueError(f"sequence length {l} exceeds max positions {config.max_positions}")
    if train and rng is None:
        raise ValueError("train mode requires an rng for dropout")

    h = T.add(T.embedding(params["tok_emb"], ids),
              T.reshape(params["pos_emb"][:l], (1, l, config.dim)))
    h = T.dropout(h, config.dropout, rng, train)

    for i in range(config.layers):
        pre = f"layer{i}."
        x = T.layer_norm(h, params[pre + "ln1_g"], params[pre + "ln1_b"])
        q = _split_heads(_linear(x, params, pre + "q"), config.heads)
        k = _split_heads(_linear(x, params, pre + "k"), config.heads)
        v = _split_heads(_linear(x, params, pre + "v"), config.heads)
        if config.attention == "sliding" and config.window < l:
            ctx = _attend_sliding(q, k, v, mask, config.window,
                                  tuple(sorted(config.global_tokens)), capture=capture)
        else:
            ctx, probs = _attend_dense(q, k, v, mask)
            if capture is not None and config.attention == "sliding":
                capture.append({"dense_probs": probs.data.copy()})
        a = _linear(_merge_heads(ctx), params, pre + "o")
        h = T.add(h, T.dropout(a, config.dropout, rng, train))
        x = T.layer_norm(h, params[pre + "ln2_g"], params[pre + "ln2_b"])
        f = _linear(T.relu(_linear(x, params, pre + "ff1")), params, pre + "ff2")
        h = T.add(h, T.dropout(f, config.dropout, rng, train))

    return T.layer_norm(h, params["lnf_g"], params["lnf_b"])


def encode_chunk(ids, mask, params, config, train=False, rng=None):
    """[CLS] vectors, shape (B, D), for a batch of chunk token sequences."""
    h = encoder_forward(ids, mask, params, config, train=train, rng=rng)
    return h[:, 0, :]


def encode_sparse(ids, mask, params, config, train=False, rng=None, capture=None):
    """Sliding-window encoder; returns (hidden (B,L,D), cls (B,D))."""
    if config.attention != "sliding":
        raise ValueError("encode_sparse requires a sliding-attention config")
    config.validate()
    h = encoder_forward(ids, mask, params, config, train=train, rng=rng, capture=capture)
    return h, h[:, 0, :]


def pad_to_length(tokens, length, cls_prefix=True):
    """CLS + tokens, truncated/padded to `length`; returns (ids, mask)."""
    toks = ([CLS_ID] if cls_prefix else []) + list(tokens)
    toks = toks[:length]
    ids = np.full(length, PAD_ID, dtype=np.int64)
    ids[:len(toks)] = toks
    mask = np.zeros(length, dtype=bool)
    mask[:len(toks)] = True
    return ids, mask
