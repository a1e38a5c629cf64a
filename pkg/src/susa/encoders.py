"""Learnable encoders: instruction, per-view textual semantics, and the
shared-weight panorama encoder used by both the depth and RGB passes."""
from __future__ import annotations

import numpy as np

from . import nn
from . import tensor as T

UNK_TOKEN = "<unk>"
MAX_INSTRUCTION_LEN = 64


def init_token_table(rng: np.random.Generator, vocab_size: int, d: int) -> dict:
    return {
        "embed": T.param(rng.standard_normal((vocab_size, d)) * 0.1),
        "pos": T.param(rng.standard_normal((MAX_INSTRUCTION_LEN, d)) * 0.1),
        "empty_view": T.param(rng.standard_normal((1, d)) * 0.1),
        "ln": nn.init_layer_norm(d),
    }


def init_instruction_encoder(rng, d: int, layers: int = 2) -> dict:
    return {"layers": {str(i): nn.init_transformer_layer(rng, d) for i in range(layers)},
            "pool_q": T.param(rng.standard_normal(d) * 0.1)}


def init_pano_encoder(rng, d_v: int, d: int, layers: int = 2) -> dict:
    # one parameter set; both modality passes run through it
    return {"proj": nn.init_linear(rng, d_v, d),
            "modality": T.param(np.zeros((2, d))),
            "layers": {str(i): nn.init_transformer_layer(rng, d) for i in range(layers)}}


def token_ids(token_to_id: dict, tokens: list) -> list[int]:
    unk = token_to_id[UNK_TOKEN]
    return [token_to_id.get(t, unk) for t in tokens]


def embed_tokens(table: dict, ids: list[int]) -> T.Tensor:
    return T.take_rows(table["embed"], ids)


def encode_instruction(table: dict, enc: dict, token_to_id: dict, tokens: list):
    """Instruction features (l×d) and an attention-pooled vector (d).

    Unknown tokens map to the reserved UNK row rather than failing.
    """
    if len(tokens) < 1:
        raise ValueError("instruction must contain at least one token")
    ids = token_ids(token_to_id, tokens[:MAX_INSTRUCTION_LEN])
    x = embed_tokens(table, ids)
    x = T.add(x, T.take_rows(table["pos"], list(range(len(ids)))))
    for layer in enc["layers"].values():
        x = nn.self_attention_layer(layer, x)
    from .hrf import attn_pool
    pooled = attn_pool(x, enc["pool_q"])
    return x, pooled


def encode_semantics(table: dict, token_to_id: dict, per_view_tokens: list[list]) -> T.Tensor:
    """Per-view textual semantic features (n×d).

    Empty views take a learned placeholder row; multi-landmark views take the
    mean of their landmark embeddings. Rows are layer-normalized.
    """
    rows = []
    for toks in per_view_tokens:
        if not toks:
            rows.append(table["empty_view"])
        else:
            emb = embed_tokens(table, token_ids(token_to_id, toks))
            rows.append(T.mean(emb, axis=0, keepdims=True))
    x = T.concat(rows, axis=0) if len(rows) > 1 else rows[0]
    return nn.apply_layer_norm(table["ln"], x)


def encode_panorama(enc: dict, features: np.ndarray, modality: str) -> T.Tensor:
    """Shared-weight panorama encoding of raw view features (n×d_v → n×d)."""
    mod_index = {"depth": 0, "rgb": 1}
    if modality not in mod_index:
        raise ValueError(f"unknown modality {modality!r}")
    feats = features if isinstance(features, T.Tensor) else T.constant(features)
    if feats.shape[1] != enc["proj"]["W"].shape[0]:
        raise T.ShapeError(
            f"encode_panorama: feature dim {feats.shape[1]} does not match "
            f"projection input {enc['proj']['W'].shape[0]}")
    x = nn.apply_linear(enc["proj"], feats)
    x = T.add(x, T.take_rows(enc["modality"], [mod_index[modality]] * feats.shape[0]))
    for layer in enc["layers"].values():
        x = nn.self_attention_layer(layer, x)
    return x
