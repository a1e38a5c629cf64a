"""Full agent assembly: parameters, per-episode rollout, checkpoints."""
from __future__ import annotations

import json
from dataclasses import dataclass, asdict, field

import numpy as np

from . import dsp, encoders, hrf, nn, policy, tsu
from . import tensor as T
from .world import World, Episode, observe, rng_for

CHECKPOINT_VERSION = 1


@dataclass
class ModelConfig:
    d: int = 32
    instr_layers: int = 2
    pano_layers: int = 2
    tca_layers: int = 2
    gasa_layers: int = 4
    delta: str | float = 0.5            # float in [0,1] or "adaptive"
    temperature: float = 0.07
    normalize_beta: bool = True
    scale_gasa_logits: bool = True
    use_modality_embedding: bool = True
    max_steps: int = 15
    branch_mask: tuple = (1.0, 1.0, 1.0, 1.0)   # (sem, rgb_local, depth_map, rgb_map)
    fixed_uniform_beta: bool = False            # bypass learned fusion weights
    seed: int = 0

    def validate(self):
        if self.delta != "adaptive":
            d = float(self.delta)
            if not 0.0 <= d <= 1.0:
                raise ValueError(f"delta must be in [0,1] or 'adaptive', got {self.delta}")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")


@dataclass
class StepRecord:
    node: int
    candidate_ids: list
    logits: list
    probs: list
    branch_logits: dict
    beta: list
    gate: float
    chosen: int | None
    target_index: int | None


@dataclass
class RolloutResult:
    path: list
    steps: list
    action_loss: T.Tensor | None
    hybrid: T.Tensor | None
    pooled_instruction: T.Tensor | None
    grounding_scores: list | None
    predicted_object: dict | None


class SusaModel:
    def __init__(self, config: ModelConfig, vocab: list[str]):
        config.validate()
        self.config = config
        self.vocab = list(vocab)
        self.token_to_id = {t: i for i, t in enumerate(vocab)}
        rng = rng_for(config.seed, "model")
        d = config.d
        self.params = {
            "table": encoders.init_token_table(rng, len(vocab), d),
            "instr_enc": encoders.init_instruction_encoder(rng, d, config.instr_layers),
            "pano_enc": encoders.init_pano_encoder(rng, d, d, config.pano_layers),
            "tca": tsu.init_tca(rng, d, config.tca_layers),
            "gasa_rgb_local": dsp.init_gasa(rng, d, config.gasa_layers),
            "gasa_depth_map": dsp.init_gasa(rng, d, config.gasa_layers),
            "gasa_rgb_map": dsp.init_gasa(rng, d, config.gasa_layers),
            "stop_sem": T.param(rng.standard_normal(d) * 0.1),
            "stop_rgb_local": T.param(rng.standard_normal(d) * 0.1),
            "stop_depth_map": T.param(rng.standard_normal(d) * 0.1),
            "stop_rgb_map": T.param(rng.standard_normal(d) * 0.1),
            "hrf": hrf.init_hrf(rng, d),
            "policy": policy.init_policy(rng, d),
        }
        self.params["policy"]["box_proj"] = T.param(rng.standard_normal((4, d)) * 0.1)
        if config.delta == "adaptive":
            self.params["delta_raw"] = T.param(np.zeros(1))
        if not config.use_modality_embedding:
            self.params["pano_enc"]["modality"].data[:] = 0.0

    # ------------------------------------------------------------- plumbing

    def named_parameters(self) -> dict[str, T.Tensor]:
        return nn.flatten_params(self.params)

    def zero_grads(self):
        for t in self.named_parameters().values():
            t.zero_grad()

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {k: v.data for k, v in self.named_parameters().items()}

    def load_state(self, arrays: dict):
        mine = self.named_parameters()
        missing = set(mine) ^ set(arrays)
        if missing:
            raise ValueError(f"checkpoint/model parameter mismatch: {sorted(missing)[:5]}")
        for k, t in mine.items():
            a = np.asarray(arrays[k], dtype=np.float64)
            if a.shape != t.data.shape:
                raise ValueError(f"checkpoint shape mismatch for {k}: "
                                 f"{a.shape} vs {t.data.shape}")
            t.data = a.copy()

    def delta_value(self):
        if self.config.delta == "adaptive":
            return tsu.adaptive_delta(T.reshape(self.params["delta_raw"], (1,)))
        return float(self.config.delta)

    # -------------------------------------------------------------- rollout

    def encode_instruction(self, tokens: list):
        instr, pooled = encoders.encode_instruction(
            self.params["table"], self.params["instr_enc"], self.token_to_id, tokens)
        return instr, pooled

    def rollout(self, world: World, episode: Episode, mode: str = "greedy",
                rng: np.random.Generator | None = None,
                compute_loss: bool = False, supervision: str = "teacher",
                enc_cache: dict | None = None,
                stop_loss_weight: float = 1.0) -> RolloutResult:
        """Run one episode.

        mode: 'teacher' follows gt actions, 'greedy' picks argmax,
        'sample' draws from the action distribution.
        supervision (when compute_loss): 'teacher' targets the next gt node,
        'pseudo' targets the map node geodesically nearest the goal.
        enc_cache: per-node observation encodings, shareable across rollouts
        that live on the same tape (parameters fixed).
        stop_loss_weight: CE weight on stop-target decisions; episodes hold
        one stop per several moves, so >1 rebalances the classes.
        """
        cfg = self.config
        p = self.params
        geodesic = world.graph.geodesic
        instr, pooled_instr = self.encode_instruction(episode.instruction_tokens)
        instr_pool_hrf = hrf.attn_pool(instr, p["hrf"]["pool_q"]["instr"])
        # instruction is fixed for the whole episode: cache its K/V projections
        kv_tca = tsu.instruction_kv(p["tca"], instr)
        kv_cross = {s: dsp.instruction_kv(p[f"gasa_{s}"], instr)
                    for s in ("rgb_local", "depth_map", "rgb_map")}

        depth_map = dsp.ExplorationMap()
        rgb_map = dsp.ExplorationMap()
        cur = episode.start_node
        path = [cur]
        steps: list[StepRecord] = []
        losses = []
        hybrid_final = None
        delta = self.delta_value()
        mask = np.asarray(cfg.branch_mask, dtype=np.float64)
        gt_cursor = 0
        if enc_cache is None:
            enc_cache = {}

        for step_i in range(cfg.max_steps + 1):
            panorama, candidates = observe(world, cur)
            cached = enc_cache.get(cur)
            if cached is None:
                view_tokens = [v.landmark_tokens for v in panorama]
                rgb_raw = np.stack([v.rgb_feature for v in panorama])
                depth_raw = np.stack([v.depth_feature for v in panorama])
                enc_depth = encoders.encode_panorama(p["pano_enc"], depth_raw, "depth")
                enc_rgb = encoders.encode_panorama(p["pano_enc"], rgb_raw, "rgb")
                sem = encoders.encode_semantics(p["table"], self.token_to_id, view_tokens)
                enc_cache[cur] = (enc_depth, enc_rgb, sem)
            else:
                enc_depth, enc_rgb, sem = cached
            dsp.update_map(depth_map, world, cur, enc_depth, candidates)
            dsp.update_map(rgb_map, world, cur, enc_rgb, candidates)

            # local semantic stream (TSU)
            g_stat = tsu.static_match(sem, instr)
            g_dyn = tsu.dynamic_match(p["tca"], sem, instr, kv_cache=kv_tca)
            sem_tilde = tsu.combine(sem, g_stat, g_dyn, delta)
            d = cfg.d
            sem_rows = T.concat([T.reshape(p["stop_sem"], (1, d)), sem_tilde], axis=0)

            # local RGB stream through the cross encoder (no graph distances)
            rgb_rows_in = T.concat([T.reshape(p["stop_rgb_local"], (1, d)), enc_rgb], axis=0)
            n_local = rgb_rows_in.shape[0]
            rgb_rows = dsp.cross_encode(p["gasa_rgb_local"], rgb_rows_in, instr,
                                        np.zeros((n_local, n_local)),
                                        scale_logits=cfg.scale_gasa_logits,
                                        kv_cache=kv_cross["rgb_local"])

            # global map streams
            dist = depth_map.distance_matrix(geodesic)
            depth_rows = dsp.cross_encode(
                p["gasa_depth_map"], depth_map.feature_rows(p["stop_depth_map"]),
                instr, dist, scale_logits=cfg.scale_gasa_logits,
                kv_cache=kv_cross["depth_map"])
            rgb_map_rows = dsp.cross_encode(
                p["gasa_rgb_map"], rgb_map.feature_rows(p["stop_rgb_map"]),
                instr, dist, scale_logits=cfg.scale_gasa_logits,
                kv_cache=kv_cross["rgb_map"])

            streams = {"sem": sem_rows, "rgb_local": rgb_rows,
                       "depth_map": depth_rows, "rgb_map": rgb_map_rows}
            stop_rows = {s: T.take_rows(streams[s], [0]) for s in hrf.STREAMS}
            if cfg.fixed_uniform_beta:
                beta = T.constant(np.full(4, 0.25))
            else:
                beta = hrf.fusion_weights(p["hrf"], stop_rows,
                                          normalize=cfg.normalize_beta)
            if not np.all(mask == 1.0):
                beta = T.mul(beta, T.constant(mask))
                if cfg.normalize_beta:
                    beta = T.div(beta, T.sum_(beta))
            beta_parts = {s: T.take_rows(T.reshape(beta, (4, 1)), [i])
                          for i, s in enumerate(hrf.STREAMS)}

            pooled = {s: hrf.attn_pool(streams[s], p["hrf"]["pool_q"][s])
                      for s in hrf.STREAMS}
            hybrid = hrf.hybrid_embed(pooled, beta)

            # branch scores
            p_sem = policy.branch_scores(p["policy"]["score_sem"], sem_rows)
            p_rgb_l = policy.branch_scores(p["policy"]["score_rgb_local"], rgb_rows)
            p_depth = policy.branch_scores(p["policy"]["score_depth_map"], depth_rows)
            p_rgb_m = policy.branch_scores(p["policy"]["score_rgb_map"], rgb_map_rows)

            # candidate list: stop + map nodes except the current one
            map_order = [nid for nid in depth_map.node_ids if nid != cur]
            keep = [0] + [i + 1 for i, nid in enumerate(depth_map.node_ids) if nid != cur]
            candidate_ids = [None] + map_order

            b1 = T.reshape(beta_parts["sem"], (1,))
            b2 = T.reshape(beta_parts["rgb_local"], (1,))
            b3 = T.reshape(beta_parts["depth_map"], (1,))
            b4 = T.reshape(beta_parts["rgb_map"], (1,))
            p_x_local = policy.fuse_pair(p_sem, p_rgb_l, b1, b2)
            p_t_full = policy.fuse_pair(p_depth, p_rgb_m, b3, b4)
            p_t = T.reshape(T.take_rows(T.reshape(p_t_full, (p_t_full.shape[0], 1)), keep),
                            (len(keep),))
            p_x_global = policy.local_to_global(p_x_local, candidates, map_order,
                                                p["policy"]["backtrack"])
            fused, gate = policy.dynamic_fuse(p["policy"], p_t, p_x_global, hybrid)
            probs = T.softmax(T.reshape(fused, (1, len(keep))), axis=1)
            probs_np = probs.data[0]
            hybrid_final = hybrid

            target_index = None
            if compute_loss:
                if supervision == "teacher":
                    target = self._teacher_target(episode, gt_cursor)
                else:
                    target = pseudo_target_node(depth_map, geodesic, episode.goal_node, cur)
                target_index = candidate_ids.index(target)
                ce = T.cross_entropy(fused, target_index)
                if target is None and stop_loss_weight != 1.0:
                    ce = T.scalar_mul(ce, stop_loss_weight)
                losses.append(ce)

            # choose and execute
            if mode == "teacher":
                chosen = self._teacher_target(episode, gt_cursor)
            elif step_i >= cfg.max_steps:
                chosen = None  # forced stop
            else:
                chosen = policy.select_action(probs_np, candidate_ids, mode=mode, rng=rng)

            steps.append(StepRecord(
                node=cur, candidate_ids=list(candidate_ids),
                logits=fused.data.tolist(), probs=probs_np.tolist(),
                branch_logits={"sem": p_sem.data.tolist(),
                               "rgb_local": p_rgb_l.data.tolist(),
                               "depth_map": p_depth.data.tolist(),
                               "rgb_map": p_rgb_m.data.tolist()},
                beta=beta.data.tolist(), gate=float(gate.data[0]),
                chosen=chosen, target_index=target_index))

            if chosen is None:
                break
            # move along the shortest path: no jumps between nodes
            hops = world.graph.shortest_path(cur, chosen)
            path.extend(hops[1:])
            cur = chosen
            if mode == "teacher":
                gt_cursor += 1

        grounding_scores = None
        predicted = None
        if episode.mode == "goal_oriented":
            objects = [o for v in world.panoramas[cur] for o in v.objects]
            scores = policy.ground_object(p["policy"], p["table"], self.token_to_id,
                                          objects, pooled_instr)
            if scores is not None:
                grounding_scores = scores.data.tolist()
                predicted = objects[int(np.argmax(scores.data))]

        action_loss = None
        if losses:
            action_loss = losses[0]
            for ls in losses[1:]:
                action_loss = T.add(action_loss, ls)
        return RolloutResult(path=path, steps=steps, action_loss=action_loss,
                             hybrid=hybrid_final, pooled_instruction=instr_pool_hrf,
                             grounding_scores=grounding_scores, predicted_object=predicted)

    def _teacher_target(self, episode: Episode, gt_cursor: int):
        if gt_cursor + 1 < len(episode.gt_path):
            return episode.gt_path[gt_cursor + 1]
        return None  # stop at the goal


def pseudo_target_node(emap: dsp.ExplorationMap, geodesic: np.ndarray,
                       goal: int, current: int):
    """Map node (visited or frontier) nearest the goal; stop if already there.

    Ties break toward the lowest node id. The current node is not a
    candidate (it is not in the action space).
    """
    if current == goal:
        return None
    best, best_d = None, np.inf
    for nid in sorted(n for n in emap.node_ids if n != current):
        dg = geodesic[nid, goal]
        if dg < best_d - 1e-12:
            best, best_d = nid, dg
    return best


# ------------------------------------------------------------- checkpoints

def save_checkpoint(model: SusaModel, path, extra: dict | None = None):
    blob = {
        "version": CHECKPOINT_VERSION,
        "config": asdict(model.config),
        "vocab": model.vocab,
        "params": {k: {"shape": list(v.shape), "data": v.reshape(-1).tolist()}
                   for k, v in model.state_arrays().items()},
    }
    if extra:
        blob["extra"] = extra
    with open(path, "w") as f:
        json.dump(blob, f)


def load_checkpoint(path) -> SusaModel:
    with open(path) as f:
        blob = json.load(f)
    if blob.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {blob.get('version')}")
    cfg_dict = dict(blob["config"])
    cfg_dict["branch_mask"] = tuple(cfg_dict.get("branch_mask", (1, 1, 1, 1)))
    if cfg_dict["delta"] != "adaptive":
        cfg_dict["delta"] = float(cfg_dict["delta"])
    config = ModelConfig(**cfg_dict)
    model = SusaModel(config, blob["vocab"])
    arrays = {k: np.array(v["data"], dtype=np.float64).reshape(v["shape"])
              for k, v in blob["params"].items()}
    model.load_state(arrays)
    return model
