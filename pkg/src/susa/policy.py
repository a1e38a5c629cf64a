"""Hierarchical action prediction over the global (map) action space."""
from __future__ import annotations

import numpy as np

from . import nn
from . import tensor as T
from .world import rng_for

STOP = None  # action sentinel: candidate index 0 everywhere


def init_policy(rng, d: int) -> dict:
    return {
        "score_sem": nn.init_ffn(rng, d, d, 1),
        "score_rgb_local": nn.init_ffn(rng, d, d, 1),
        "score_depth_map": nn.init_ffn(rng, d, d, 1),
        "score_rgb_map": nn.init_ffn(rng, d, d, 1),
        "gate_ffn": nn.init_ffn(rng, d, d, 1),
        "backtrack": T.param(np.zeros(1)),
        "ground_ffn": nn.init_ffn(rng, 2 * d, d, 1),
        "box_proj": None,  # filled by model init (needs rng continuity there)
    }


def branch_scores(ffn: dict, feats: T.Tensor) -> T.Tensor:
    """One real score per candidate row (rows → scores, shape (rows,))."""
    return T.reshape(nn.apply_ffn(ffn, feats), (feats.shape[0],))


def fuse_pair(p_a: T.Tensor, p_b: T.Tensor, beta_a: T.Tensor, beta_b: T.Tensor) -> T.Tensor:
    """Weighted sum of two aligned score vectors."""
    if p_a.shape != p_b.shape:
        raise T.ShapeError(f"fuse_pair: candidate counts differ {p_a.shape} vs {p_b.shape}")
    return T.add(T.mul(p_a, beta_a), T.mul(p_b, beta_b))


def local_to_global(p_local: T.Tensor, candidates: list, map_order: list[int],
                    backtrack: T.Tensor) -> T.Tensor:
    """Lift view-space scores (stop + n views) to the global candidate list.

    An adjacent node's score is the max over its facing views; the stop score
    passes through; every other map node gets the shared backtrack scalar.
    """
    facing: dict[int, list[int]] = {}
    for cand in candidates:
        if cand["kind"] == "move":
            facing.setdefault(cand["node_id"], []).append(cand["view_index"])
    col = T.reshape(p_local, (p_local.shape[0], 1))
    rows = [T.take_rows(col, [0])]  # stop
    bt = T.reshape(backtrack, (1, 1))
    for nid in map_order:
        if nid in facing:
            views = T.take_rows(col, [v + 1 for v in facing[nid]])
            rows.append(T.max_(views, axis=0, keepdims=True))
        else:
            rows.append(bt)
    return T.reshape(T.concat(rows, axis=0), (len(rows),))


def dynamic_fuse(p: dict, p_global: T.Tensor, p_local_global: T.Tensor,
                 hybrid: T.Tensor) -> tuple[T.Tensor, T.Tensor]:
    """Gate between map-level and view-level global scores.

    Returns (fused logits, gate scalar). gate = sigmoid(FFN(E_hyb)).
    """
    gate = T.sigmoid(T.reshape(
        nn.apply_ffn(p["gate_ffn"], T.reshape(hybrid, (1, hybrid.shape[0]))), (1,)))
    one_minus = T.sub(T.constant(1.0), gate)
    return T.add(T.mul(p_global, gate), T.mul(p_local_global, one_minus)), gate


def select_action(probs: np.ndarray, candidate_ids: list, mode: str = "greedy",
                  rng: np.random.Generator | None = None):
    """Pick a candidate id (None = stop). Greedy ties go to the lowest node id."""
    if mode == "greedy":
        best = probs.max()
        tied = [candidate_ids[i] for i, p in enumerate(probs) if p == best]
        # stop ranks below every node id on ties
        return min(tied, key=lambda x: -1 if x is None else x)
    if mode == "sample":
        if rng is None:
            raise ValueError("sample mode requires an rng")
        u = rng.random()
        cdf = np.cumsum(probs)
        return candidate_ids[int(np.searchsorted(cdf, u * cdf[-1]))]
    raise ValueError(f"unknown selection mode {mode!r}")


def ground_object(p: dict, table: dict, token_to_id: dict, objects: list,
                  pooled_instruction: T.Tensor) -> T.Tensor | None:
    """Score goal-node objects against the pooled instruction (o scores)."""
    from .encoders import embed_tokens, token_ids
    if not objects:
        return None
    d = pooled_instruction.shape[0]
    tok_emb = embed_tokens(table, token_ids(token_to_id, [o["token"] for o in objects]))
    boxes = np.array([_box_geometry(o["box"]) for o in objects])
    geo = T.matmul(T.constant(boxes), p["box_proj"])
    obj_feats = T.add(tok_emb, geo)
    instr = T.concat([T.reshape(pooled_instruction, (1, d))] * len(objects), axis=0)
    return T.reshape(nn.apply_ffn(p["ground_ffn"], T.concat([obj_feats, instr], axis=1)),
                     (len(objects),))


def _box_geometry(box) -> list[float]:
    x0, y0, x1, y1 = box
    return [(x0 + x1) / 2.0, (y0 + y1) / 2.0, x1 - x0, y1 - y0]
