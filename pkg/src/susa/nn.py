"""Parameter containers and transformer building blocks over the tensor engine."""
from __future__ import annotations

import math

import numpy as np

from . import tensor as T


def init_linear(rng: np.random.Generator, d_in: int, d_out: int) -> dict:
    scale = 1.0 / math.sqrt(d_in)
    return {"W": T.param(rng.uniform(-scale, scale, size=(d_in, d_out))),
            "b": T.param(np.zeros(d_out))}


def apply_linear(p: dict, x: T.Tensor) -> T.Tensor:
    return T.linear(x, p["W"], p["b"])


def init_layer_norm(d: int) -> dict:
    return {"gamma": T.param(np.ones(d)), "beta": T.param(np.zeros(d))}


def apply_layer_norm(p: dict, x: T.Tensor) -> T.Tensor:
    return T.layer_norm(x, p["gamma"], p["beta"])


def init_ffn(rng, d: int, hidden: int | None = None, d_out: int | None = None) -> dict:
    hidden = hidden or d
    d_out = d_out if d_out is not None else d
    return {"fc1": init_linear(rng, d, hidden), "fc2": init_linear(rng, hidden, d_out)}


def apply_ffn(p: dict, x: T.Tensor) -> T.Tensor:
    return T.ffn(x, p["fc1"]["W"], p["fc1"]["b"], p["fc2"]["W"], p["fc2"]["b"])


def init_attention(rng, d: int) -> dict:
    return {"q": init_linear(rng, d, d), "k": init_linear(rng, d, d),
            "v": init_linear(rng, d, d)}


def precompute_kv(p: dict, memory: T.Tensor) -> tuple:
    """Key/value projections for a fixed memory (cache once per episode)."""
    return apply_linear(p["k"], memory), apply_linear(p["v"], memory)


def attention(p: dict, query: T.Tensor, keys: T.Tensor = None,
              values: T.Tensor = None, bias: T.Tensor | None = None,
              scale: bool = True, kv: tuple | None = None) -> T.Tensor:
    """Single-head scaled dot-product attention; optional additive logit bias.

    Pass `kv` to reuse precomputed key/value projections.
    """
    d = query.shape[-1]
    if kv is not None:
        k, v = kv
    else:
        k = apply_linear(p["k"], keys)
        v = apply_linear(p["v"], values if values is not None else keys)
    return T.attention_proj(query, p["q"]["W"], p["q"]["b"], k, v, bias=bias,
                            scale=1.0 / math.sqrt(d) if scale else 1.0)


def attention_residual_ln(p: dict, ln: dict, x: T.Tensor, keys: T.Tensor = None,
                          bias: T.Tensor | None = None, scale: bool = True,
                          kv: tuple | None = None) -> T.Tensor:
    """Fused layer_norm(x + attention(x, keys)) residual block."""
    d = x.shape[-1]
    if kv is not None:
        k, v = kv
    else:
        k = apply_linear(p["k"], keys if keys is not None else x)
        v = apply_linear(p["v"], keys if keys is not None else x)
    return T.attention_residual_ln(x, p["q"]["W"], p["q"]["b"], k, v,
                                   ln["gamma"], ln["beta"], bias=bias,
                                   scale=1.0 / math.sqrt(d) if scale else 1.0)


def ffn_residual_ln(p: dict, ln: dict, x: T.Tensor) -> T.Tensor:
    """Fused layer_norm(x + ffn(x)) residual block."""
    return T.ffn_residual_ln(x, p["fc1"]["W"], p["fc1"]["b"],
                             p["fc2"]["W"], p["fc2"]["b"],
                             ln["gamma"], ln["beta"])


def init_transformer_layer(rng, d: int, cross: bool = False) -> dict:
    p = {"self_attn": init_attention(rng, d), "ln1": init_layer_norm(d),
         "ffn": init_ffn(rng, d), "ln_ffn": init_layer_norm(d)}
    if cross:
        p["cross_attn"] = init_attention(rng, d)
        p["ln_cross"] = init_layer_norm(d)
    return p


def self_attention_layer(p: dict, x: T.Tensor, bias: T.Tensor | None = None,
                         scale: bool = True) -> T.Tensor:
    """Post-LN residual block: self-attention then FFN."""
    h = attention_residual_ln(p["self_attn"], p["ln1"], x, bias=bias, scale=scale)
    return ffn_residual_ln(p["ffn"], p["ln_ffn"], h)


def cross_attention_block(p: dict, x: T.Tensor, memory: T.Tensor = None,
                          kv: tuple | None = None) -> T.Tensor:
    """Residual cross-attention (queries x, keys/values memory) then FFN."""
    h = attention_residual_ln(p["cross_attn"], p["ln_cross"], x, keys=memory, kv=kv)
    return ffn_residual_ln(p["ffn"], p["ln_ffn"], h)


# ------------------------------------------------------------ param plumbing

def flatten_params(tree, prefix="") -> dict[str, T.Tensor]:
    """Flatten a nested dict of Tensors into {dotted_name: Tensor}."""
    flat = {}
    if isinstance(tree, T.Tensor):
        flat[prefix.rstrip(".")] = tree
        return flat
    for key, value in tree.items():
        flat.update(flatten_params(value, f"{prefix}{key}."))
    return flat


def zero_grads(tree):
    for t in flatten_params(tree).values():
        t.zero_grad()
