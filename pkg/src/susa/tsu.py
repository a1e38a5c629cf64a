"""Textual semantic selection: static cosine matching, dynamic
instruction cross-attention, and their delta-balanced combination."""
from __future__ import annotations

from . import nn
from . import tensor as T


def init_tca(rng, d: int, layers: int = 2) -> dict:
    return {str(i): nn.init_transformer_layer(rng, d, cross=True) for i in range(layers)}


def static_match(semantics: T.Tensor, instruction: T.Tensor) -> T.Tensor:
    """Per-view static relevance: row-wise max over the cosine matrix (n)."""
    sim = T.cosine_matrix(semantics, instruction)
    return T.max_(sim, axis=1)


def instruction_kv(tca: dict, instruction: T.Tensor) -> list:
    return [nn.precompute_kv(layer["cross_attn"], instruction) for layer in tca.values()]


def dynamic_match(tca: dict, semantics: T.Tensor, instruction: T.Tensor,
                  kv_cache: list | None = None) -> T.Tensor:
    """Instruction-attended semantic features (n×d): queries are views,
    keys/values are instruction tokens."""
    x = semantics
    for i, layer in enumerate(tca.values()):
        kv = kv_cache[i] if kv_cache is not None else None
        x = nn.cross_attention_block(layer, x, instruction, kv=kv)
    return x


def combine(semantics: T.Tensor, gamma_stat: T.Tensor, gamma_dyn: T.Tensor,
            delta) -> T.Tensor:
    """delta * static-gated semantics + (1 - delta) * dynamic features.

    `delta` is either a float in [0, 1] or a learnable scalar Tensor already
    squashed to (0, 1) (adaptive mode).
    """
    gated = T.mul(semantics, T.reshape(gamma_stat, (gamma_stat.shape[0], 1)))
    if isinstance(delta, T.Tensor):
        one_minus = T.sub(T.constant(1.0), delta)
        return T.add(T.mul(gated, delta), T.mul(gamma_dyn, one_minus))
    delta = float(delta)
    if not 0.0 <= delta <= 1.0:
        raise ValueError(f"delta must lie in [0, 1], got {delta}")
    return T.add(T.scalar_mul(gated, delta), T.scalar_mul(gamma_dyn, 1.0 - delta))


def adaptive_delta(raw: T.Tensor) -> T.Tensor:
    """Squash an unconstrained learnable scalar into (0, 1)."""
    return T.sigmoid(raw)
