"""Hybrid representation fusion: attention pooling, fusion weights,
hybrid embedding, and the symmetric contrastive alignment loss."""
from __future__ import annotations

import math

import numpy as np

from . import nn
from . import tensor as T

STREAMS = ("sem", "rgb_local", "depth_map", "rgb_map")


def init_hrf(rng, d: int) -> dict:
    return {
        "pool_q": {s: T.param(rng.standard_normal(d) * 0.1)
                   for s in STREAMS + ("instr",)},
        "beta_ffn": nn.init_ffn(rng, 4 * d, d, 4),
    }


def attn_pool(h: T.Tensor, v: T.Tensor) -> T.Tensor:
    """Softmax(tanh(H)·v)-weighted sum of rows, through a final tanh (d)."""
    if h.shape[0] < 1:
        raise T.ShapeError("attn_pool: need at least one row")
    scores = T.matmul(T.tanh(h), T.reshape(v, (v.shape[0], 1)))
    eta = T.softmax(T.reshape(scores, (1, h.shape[0])), axis=1)
    return T.reshape(T.tanh(T.matmul(eta, h)), (h.shape[1],))


def fusion_weights(p: dict, stop_rows: dict, normalize: bool = True) -> T.Tensor:
    """Four branch weights from the concatenated stream stop-token rows.

    Sigmoid per the printed formula; L1-normalized to sum 1 by default.
    """
    feats = T.concat([T.reshape(stop_rows[s], (1, stop_rows[s].shape[-1]))
                      for s in STREAMS], axis=1)
    logits = nn.apply_ffn(p["beta_ffn"], feats)
    beta = T.sigmoid(T.reshape(logits, (4,)))
    if normalize:
        beta = T.div(beta, T.sum_(beta))
    return beta


def hybrid_embed(pooled: dict, beta: T.Tensor) -> T.Tensor:
    """Weighted sum of the four pooled stream vectors (d)."""
    stacked = T.concat([T.reshape(pooled[s], (1, pooled[s].shape[0]))
                        for s in STREAMS], axis=0)
    mixed = T.matmul(T.reshape(beta, (1, 4)), stacked)
    return T.reshape(mixed, (stacked.shape[1],))


def contrastive_loss(emb: T.Tensor, instr: T.Tensor, temperature: float = 0.07) -> T.Tensor:
    """Symmetric InfoNCE over cosine similarities; positives on the diagonal."""
    if temperature <= 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    if emb.shape != instr.shape or len(emb.shape) != 2:
        raise T.ShapeError(f"contrastive_loss: shapes {emb.shape} vs {instr.shape}")
    b = emb.shape[0]
    sim = T.scalar_mul(T.cosine_matrix(emb, instr), 1.0 / temperature)
    log_rows = T.log(T.softmax(sim, axis=1))
    log_cols = T.log(T.softmax(sim, axis=0))
    row_diag = _diagonal(log_rows)
    col_diag = _diagonal(log_cols)
    total = T.add(T.sum_(row_diag), T.sum_(col_diag))
    return T.scalar_mul(total, -1.0 / (2.0 * b))


def _diagonal(m: T.Tensor) -> T.Tensor:
    b = m.shape[0]
    flat = T.reshape(m, (b * b,))
    idx = [i * b + i for i in range(b)]
    return T.take_rows(T.reshape(flat, (b * b, 1)), idx)
