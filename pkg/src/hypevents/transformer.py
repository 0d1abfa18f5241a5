"""A small pre-norm transformer shared by the causal LM and the encoder.

Parameters live in a flat dict of named tensors so optimizers and
checkpoints can treat models uniformly.  The same block runs in causal
mode (upper-triangular attention mask) for infilling and in bidirectional
mode with key padding masks for the classifier encoder.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .rng import RngStream
from .tensor import Tensor

INIT_STD = 0.02
NEG_INF = -1e9


def init_params(stream: RngStream, vocab_size: int, d_model: int,
                n_layers: int, n_heads: int, max_seq_len: int) -> dict[str, Tensor]:
    if d_model % n_heads != 0:
        raise ValueError(f"d_model {d_model} not divisible by n_heads {n_heads}")

    def w(name, shape):
        return name, Tensor(stream.split(name).normal(shape, INIT_STD),
                            requires_grad=True)

    def zeros(name, shape):
        return name, Tensor(np.zeros(shape), requires_grad=True)

    def ones(name, shape):
        return name, Tensor(np.ones(shape), requires_grad=True)

    params = dict([
        w("token_emb", (vocab_size, d_model)),
        w("pos_emb", (max_seq_len, d_model)),
        ones("final_ln_g", (d_model,)),
        zeros("final_ln_b", (d_model,)),
    ])
    for i in range(n_layers):
        p = f"layer{i}."
        params.update(dict([
            ones(p + "ln1_g", (d_model,)), zeros(p + "ln1_b", (d_model,)),
            w(p + "attn_wq", (d_model, d_model)), zeros(p + "attn_bq", (d_model,)),
            w(p + "attn_wk", (d_model, d_model)), zeros(p + "attn_bk", (d_model,)),
            w(p + "attn_wv", (d_model, d_model)), zeros(p + "attn_bv", (d_model,)),
            w(p + "attn_wo", (d_model, d_model)), zeros(p + "attn_bo", (d_model,)),
            ones(p + "ln2_g", (d_model,)), zeros(p + "ln2_b", (d_model,)),
            w(p + "mlp_w1", (d_model, 4 * d_model)), zeros(p + "mlp_b1", (4 * d_model,)),
            w(p + "mlp_w2", (4 * d_model, d_model)), zeros(p + "mlp_b2", (d_model,)),
        ]))
    return params


def attention_mask(batch: int, n_heads: int, seq_len: int, causal: bool,
                   lengths=None) -> np.ndarray:
    """Additive attention mask (B, H, T, T): 0 where allowed, NEG_INF where not.

    lengths, when given, blocks attention TO padding positions; queries at
    padding positions are left free (their outputs are ignored downstream).
    """
    mask = np.zeros((batch, n_heads, seq_len, seq_len))
    if causal:
        upper = np.triu(np.full((seq_len, seq_len), NEG_INF), k=1)
        mask += upper
    if lengths is not None:
        for b, n in enumerate(lengths):
            if n < seq_len:
                mask[b, :, :, n:] = NEG_INF
    return mask


def _linear(x_flat: Tensor, w: Tensor, b: Tensor) -> Tensor:
    return T.add(T.matmul(x_flat, w), b)


def forward_hidden(params: dict[str, Tensor], ids: np.ndarray, n_layers: int,
                   n_heads: int, *, causal: bool, lengths=None,
                   dropout_rate: float = 0.0, stream: RngStream | None = None
                   ) -> Tensor:
    """Hidden states (B, T, D) for a batch of id sequences.

    stream supplies dropout masks and must be given when dropout_rate > 0;
    passing dropout_rate = 0 runs the model deterministically.
    """
    if dropout_rate > 0.0 and stream is None:
        raise ValueError("dropout requires an rng stream")
    ids = np.asarray(ids)
    if ids.ndim != 2:
        raise T.ShapeError(f"ids must be (batch, seq), got {ids.shape}")
    b, t = ids.shape
    d = params["token_emb"].shape[1]
    max_len = params["pos_emb"].shape[0]
    if t > max_len:
        raise T.ShapeError(f"sequence length {t} exceeds max_seq_len {max_len}")
    head_dim = d // n_heads

    def drop(x, site):
        if dropout_rate == 0.0:
            return x
        return T.dropout(x, dropout_rate, stream.split(site))

    positions = np.broadcast_to(np.arange(t), (b, t))
    x = T.add(T.embedding(params["token_emb"], ids),
              T.embedding(params["pos_emb"], positions))
    x = drop(x, "embed")

    mask = Tensor(attention_mask(b, n_heads, t, causal, lengths))
    scale = 1.0 / np.sqrt(head_dim)
    for i in range(n_layers):
        p = f"layer{i}."
        h = T.layer_norm(x, params[p + "ln1_g"], params[p + "ln1_b"])
        h_flat = T.reshape(h, (b * t, d))

        def heads(m):
            # (B*T, D) -> (B, H, T, head_dim)
            return T.swap_axes(T.reshape(m, (b, t, n_heads, head_dim)), 1, 2)

        q = heads(_linear(h_flat, params[p + "attn_wq"], params[p + "attn_bq"]))
        k = heads(_linear(h_flat, params[p + "attn_wk"], params[p + "attn_bk"]))
        v = heads(_linear(h_flat, params[p + "attn_wv"], params[p + "attn_bv"]))

        scores = T.scale(T.matmul(q, T.swap_axes(k, 2, 3)), scale)
        scores = T.add(scores, mask)
        attn = T.softmax(scores, axis=-1)
        ctx = T.matmul(attn, v)  # (B, H, T, head_dim)
        ctx = T.reshape(T.swap_axes(ctx, 1, 2), (b * t, d))
        proj = _linear(ctx, params[p + "attn_wo"], params[p + "attn_bo"])
        x = T.add(x, drop(T.reshape(proj, (b, t, d)), f"attn{i}"))

        h2 = T.layer_norm(x, params[p + "ln2_g"], params[p + "ln2_b"])
        h2_flat = T.reshape(h2, (b * t, d))
        m1 = T.gelu(_linear(h2_flat, params[p + "mlp_w1"], params[p + "mlp_b1"]))
        m2 = _linear(m1, params[p + "mlp_w2"], params[p + "mlp_b2"])
        x = T.add(x, drop(T.reshape(m2, (b, t, d)), f"mlp{i}"))

    return T.layer_norm(x, params["final_ln_g"], params["final_ln_b"])


def lm_logits(params: dict[str, Tensor], hidden: Tensor) -> Tensor:
    """Project hidden states onto the vocabulary with the tied embedding."""
    b, t, d = hidden.shape
    v = params["token_emb"].shape[0]
    flat = T.reshape(hidden, (b * t, d))
    out = T.matmul(flat, T.swap_axes(params["token_emb"], 0, 1))
    return T.reshape(out, (b, t, v))
