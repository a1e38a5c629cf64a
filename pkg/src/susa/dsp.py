"""Depth/RGB exploration maps and the graph-aware cross-modal encoder."""
from __future__ import annotations

import math

import numpy as np

from . import nn
from . import tensor as T

DEFAULT_BUCKET_EDGES = (0.0, 1.0, 2.0, 4.0, 8.0, 16.0)


class ExplorationMap:
    """Trajectory-level topological map for one modality.

    Index 0 is the virtual stop token. Visited-node features are the mean
    over the node's own encoded views; frontier features are the mean over
    facing views contributed by visited neighbors, keyed by contributor so
    re-applying the same step is idempotent.
    """

    def __init__(self):
        self.node_ids: list[int] = []              # map order, excludes stop
        self.status: dict[int, str] = {}           # visited | frontier
        self.visit_step: dict[int, int] = {}
        self.visited_feat: dict[int, T.Tensor] = {}
        self.frontier_obs: dict[int, dict[int, T.Tensor]] = {}
        self._frontier_mean: dict[int, T.Tensor] = {}   # invalidated on new obs
        self.current_node: int | None = None
        self.step = 0

    def feature_rows(self, stop_token: T.Tensor) -> T.Tensor:
        """(k+1)×d feature matrix, stop token first, then map order."""
        rows = [T.reshape(stop_token, (1, stop_token.shape[-1]))]
        for nid in self.node_ids:
            if self.status[nid] == "visited":
                rows.append(self.visited_feat[nid])
            else:
                row = self._frontier_mean.get(nid)
                if row is None:
                    obs = [self.frontier_obs[nid][src]
                           for src in sorted(self.frontier_obs[nid])]
                    stacked = T.concat(obs, axis=0) if len(obs) > 1 else obs[0]
                    row = T.mean(stacked, axis=0, keepdims=True)
                    self._frontier_mean[nid] = row
                rows.append(row)
        return T.concat(rows, axis=0) if len(rows) > 1 else rows[0]

    def distance_matrix(self, geodesic: np.ndarray) -> np.ndarray:
        """(k+1)×(k+1) geodesic distances; stop sits at the current node."""
        ids = [self.current_node] + self.node_ids
        idx = np.array(ids)
        return geodesic[np.ix_(idx, idx)]

    def snapshot(self) -> dict:
        return {"node_ids": list(self.node_ids),
                "status": {str(k): v for k, v in self.status.items()},
                "visit_step": {str(k): v for k, v in self.visit_step.items()},
                "current_node": self.current_node}


def update_map(emap: ExplorationMap, world, current_node: int,
               encoded_panorama: T.Tensor, candidates: list) -> ExplorationMap:
    """Mark `current_node` visited and fold its facing views into frontiers.

    `encoded_panorama` is this modality's n×d encoding of the node's views;
    `candidates` is the observe() candidate list (stop first).
    """
    if current_node not in world.panoramas:
        raise KeyError(f"node {current_node} not in world")
    emap.step += 1
    emap.current_node = current_node
    if current_node not in emap.status:
        emap.node_ids.append(current_node)
    emap.status[current_node] = "visited"
    emap.visit_step.setdefault(current_node, emap.step)
    emap.visited_feat[current_node] = T.mean(encoded_panorama, axis=0, keepdims=True)
    emap.frontier_obs.pop(current_node, None)
    emap._frontier_mean.pop(current_node, None)
    for cand in candidates:
        if cand["kind"] != "move":
            continue
        nb = cand["node_id"]
        if emap.status.get(nb) == "visited":
            continue
        if nb not in emap.status:
            emap.node_ids.append(nb)
            emap.status[nb] = "frontier"
            emap.frontier_obs[nb] = {}
        facing = T.take_rows(encoded_panorama, [cand["view_index"]])
        emap.frontier_obs[nb][current_node] = facing
        emap._frontier_mean.pop(nb, None)
    return emap


def bucketize(dist: np.ndarray, edges=DEFAULT_BUCKET_EDGES) -> np.ndarray:
    """Bucket index per distance: [e_i, e_{i+1}) plus a final open bucket."""
    return np.searchsorted(np.asarray(edges)[1:], dist, side="right")


def init_gasa(rng, d: int, layers: int = 4, bucket_count: int = len(DEFAULT_BUCKET_EDGES)) -> dict:
    p = {"layers": {}}
    for i in range(layers):
        p["layers"][str(i)] = {
            "gasa": nn.init_attention(rng, d),
            "ln_gasa": nn.init_layer_norm(d),
            "cross": nn.init_attention(rng, d),
            "ln_cross": nn.init_layer_norm(d),
            "ffn": nn.init_ffn(rng, d),
            "ln_ffn": nn.init_layer_norm(d),
            "dist_bias": T.param(np.zeros(bucket_count)),
        }
    return p


def gasa_layer(layer: dict, x: T.Tensor, dist: np.ndarray,
               scale_logits: bool = True) -> T.Tensor:
    """Graph-aware self-attention with a learned per-bucket distance bias."""
    k = x.shape[0]
    if dist.shape != (k, k):
        raise T.ShapeError(f"gasa_layer: dist shape {dist.shape} vs k={k}")
    bias = T.bucket_bias(layer["dist_bias"], bucketize(dist))
    return nn.attention_residual_ln(layer["gasa"], layer["ln_gasa"], x,
                                    bias=bias, scale=scale_logits)


def instruction_kv(p: dict, instruction: T.Tensor) -> list:
    """Per-layer key/value projections of a fixed instruction (episode cache)."""
    return [nn.precompute_kv(layer["cross"], instruction)
            for layer in p["layers"].values()]


def cross_encode(p: dict, feats: T.Tensor, instruction: T.Tensor,
                 dist: np.ndarray, scale_logits: bool = True,
                 kv_cache: list | None = None) -> T.Tensor:
    """Refine map/panorama features against the instruction.

    Each of the residual layers applies graph-aware self-attention, then
    cross-attention onto the instruction, then an FFN.
    """
    x = feats
    for i, layer in enumerate(p["layers"].values()):
        x = gasa_layer(layer, x, dist, scale_logits=scale_logits)
        kv = kv_cache[i] if kv_cache is not None else None
        x = nn.attention_residual_ln(layer["cross"], layer["ln_cross"], x,
                                     keys=instruction, kv=kv)
        x = nn.ffn_residual_ln(layer["ffn"], layer["ln_ffn"], x)
    return x
