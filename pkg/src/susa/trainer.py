"""Behavior-cloning fine-tuning: teacher/student rollouts, the combined
action + contrastive objective, and SGD with momentum."""
from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field, asdict

import numpy as np

from . import hrf, metrics
from . import tensor as T
from .model import ModelConfig, SusaModel, save_checkpoint
from .world import World, WorldParams, generate_world, make_episode, rng_for


@dataclass
class TrainConfig:
    iterations: int = 2000
    batch_size: int = 8
    optimizer: str = "adam"     # "adam" or "sgd"; adam is the desk-scale default
    lr: float = 0.0015
    lr_final: float | None = 0.0001  # cosine-decay target; None = constant lr
    momentum: float = 0.9       # sgd momentum / adam first-moment decay
    seed: int = 0
    lambda1: float = 0.2        # weight of the teacher-forced action loss
    lambda2: float = 0.8        # weight of the contrastive alignment loss
    stop_loss_weight: float = 2.0  # CE weight on stop decisions (class rebalance)
    grounding_weight: float = 0.0  # auxiliary object-grounding loss (goal_oriented)
    n_train_worlds: int = 48
    episode_mode: str = "fine_grained"
    eval_interval: int = 0      # 0 disables periodic eval
    eval_episodes: int = 20
    warm_start_branches: tuple = ()   # branches kept after the warm-start phase
    warm_start_iterations: int = 0
    log_path: str | None = None
    checkpoint_path: str | None = None
    checkpoint_interval: int = 0

    def validate(self):
        if self.iterations < 0 or self.batch_size < 1:
            raise ValueError("iterations must be >= 0 and batch_size >= 1")
        for name in ("lambda1", "lambda2", "lr", "momentum", "grounding_weight"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.lr_final is not None and self.lr_final < 0:
            raise ValueError("lr_final must be non-negative")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"optimizer must be 'adam' or 'sgd', got {self.optimizer!r}")


# parameter subtrees owned by each warm-startable branch
BRANCH_PARAM_PREFIXES = {
    "sem": ("tca.", "stop_sem", "policy.score_sem."),
    "rgb_local": ("gasa_rgb_local.", "stop_rgb_local", "policy.score_rgb_local."),
    "depth_map": ("gasa_depth_map.", "stop_depth_map", "policy.score_depth_map."),
    "rgb_map": ("gasa_rgb_map.", "stop_rgb_map", "policy.score_rgb_map."),
}


class SgdMomentum:
    def __init__(self, params: dict[str, T.Tensor], lr: float, momentum: float):
        self.params = params
        self.lr = lr
        self.momentum = momentum
        self.velocity = {k: np.zeros_like(t.data) for k, t in params.items()}

    def step(self):
        if self.lr == 0.0:
            return
        for k, t in self.params.items():
            if t.grad is None:
                continue
            v = self.velocity[k]
            v *= self.momentum
            v -= self.lr * t.grad
            t.data = t.data + v

    def zero_grad(self):
        for t in self.params.values():
            t.zero_grad()

    def state(self) -> dict:
        return {"velocity": {k: v.reshape(-1).tolist()
                             for k, v in self.velocity.items()}}

    def load_state(self, st: dict):
        for k, v in st.get("velocity", {}).items():
            self.velocity[k] = np.asarray(v, dtype=np.float64).reshape(
                self.velocity[k].shape)


class Adam:
    """Diagonal-moment optimizer; first-moment decay reuses cfg.momentum."""

    def __init__(self, params: dict[str, T.Tensor], lr: float, b1: float = 0.9,
                 b2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.b1, self.b2, self.eps = b1, b2, eps
        self.m = {k: np.zeros_like(t.data) for k, t in params.items()}
        self.v = {k: np.zeros_like(t.data) for k, t in params.items()}
        self.t = 0

    def step(self):
        if self.lr == 0.0:
            return
        self.t += 1
        bc1 = 1.0 - self.b1 ** self.t
        bc2 = 1.0 - self.b2 ** self.t
        for k, t in self.params.items():
            if t.grad is None:
                continue
            m = self.m[k]
            v = self.v[k]
            m *= self.b1
            m += (1.0 - self.b1) * t.grad
            v *= self.b2
            v += (1.0 - self.b2) * np.square(t.grad)
            t.data = t.data - self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)

    def zero_grad(self):
        for t in self.params.values():
            t.zero_grad()

    def state(self) -> dict:
        return {"t": self.t,
                "m": {k: a.reshape(-1).tolist() for k, a in self.m.items()},
                "v": {k: a.reshape(-1).tolist() for k, a in self.v.items()}}

    def load_state(self, st: dict):
        self.t = int(st.get("t", 0))
        for field, store in (("m", self.m), ("v", self.v)):
            for k, a in st.get(field, {}).items():
                store[k] = np.asarray(a, dtype=np.float64).reshape(store[k].shape)


def make_optimizer(cfg, params: dict[str, T.Tensor]):
    if cfg.optimizer == "adam":
        return Adam(params, cfg.lr, b1=cfg.momentum)
    if cfg.optimizer == "sgd":
        return SgdMomentum(params, cfg.lr, cfg.momentum)
    raise ValueError(f"unknown optimizer {cfg.optimizer!r}")


def pseudo_target(emap, geodesic, goal: int, current: int):
    """Supervision target for student rollouts; see model.pseudo_target_node."""
    from .model import pseudo_target_node
    return pseudo_target_node(emap, geodesic, goal, current)


def episode_loss(model: SusaModel, world: World, episodes: list, mode: str,
                 cfg: TrainConfig, rng: np.random.Generator | None = None):
    """Batch loss on the active tape. Returns (total, breakdown dict).

    Teacher batches contribute lambda1 * sum(CE vs gt action); student
    batches contribute sum(CE vs pseudo-target) at weight 1. Both add
    lambda2 * contrastive loss over final-step (hybrid, instruction) pairs.
    """
    if mode not in ("teacher", "student"):
        raise ValueError(f"unknown rollout mode {mode!r}")
    action_losses = []
    hybrids, instrs = [], []
    ground_losses = []
    first_beta = None
    enc_cache: dict = {}    # node encodings are shared across the batch
    for ep in episodes:
        if mode == "teacher":
            res = model.rollout(world, ep, mode="teacher", compute_loss=True,
                                supervision="teacher", enc_cache=enc_cache,
                                stop_loss_weight=cfg.stop_loss_weight)
        else:
            res = model.rollout(world, ep, mode="sample", rng=rng,
                                compute_loss=True, supervision="pseudo",
                                enc_cache=enc_cache,
                                stop_loss_weight=cfg.stop_loss_weight)
        action_losses.append(res.action_loss)
        if first_beta is None:
            first_beta = res.steps[0].beta
        hybrids.append(T.reshape(res.hybrid, (1, res.hybrid.shape[0])))
        instrs.append(T.reshape(res.pooled_instruction,
                                (1, res.pooled_instruction.shape[0])))
        if cfg.grounding_weight > 0 and ep.mode == "goal_oriented":
            gl = _grounding_loss(model, world, ep)
            if gl is not None:
                ground_losses.append(gl)

    action_sum = action_losses[0]
    for al in action_losses[1:]:
        action_sum = T.add(action_sum, al)
    cl = hrf.contrastive_loss(T.concat(hybrids, axis=0), T.concat(instrs, axis=0),
                              temperature=model.config.temperature)
    weight = cfg.lambda1 if mode == "teacher" else 1.0
    total = T.add(T.scalar_mul(action_sum, weight), T.scalar_mul(cl, cfg.lambda2))
    breakdown = {"action": float(action_sum.data), "contrastive": float(cl.data),
                 "mode": mode, "action_weight": weight, "beta": first_beta}
    if ground_losses:
        gsum = ground_losses[0]
        for gl in ground_losses[1:]:
            gsum = T.add(gsum, gl)
        total = T.add(total, T.scalar_mul(gsum, cfg.grounding_weight))
        breakdown["grounding"] = float(gsum.data)
    return total, breakdown


def _grounding_loss(model: SusaModel, world: World, ep):
    """Cross-entropy of the grounding head at the goal node."""
    from . import policy as pol
    objects = [o for v in world.panoramas[ep.goal_node] for o in v.objects]
    target = next((i for i, o in enumerate(objects)
                   if o["object_id"] == ep.target_object_id), None)
    if target is None or len(objects) < 2:
        return None
    _, pooled = model.encode_instruction(ep.instruction_tokens)
    scores = pol.ground_object(model.params["policy"], model.params["table"],
                               model.token_to_id, objects, pooled)
    return T.cross_entropy(scores, target)


def world_seed(base_seed: int, index: int, unseen_offset: int = 0) -> int:
    """World-seed scheme: seen split uses indices [0, n); unseen adds a
    disjoint offset so layouts never overlap between splits."""
    return base_seed * 1000 + unseen_offset + index


def make_training_worlds(cfg: TrainConfig, params: WorldParams) -> list[World]:
    import dataclasses
    worlds = []
    for i in range(cfg.n_train_worlds):
        wp = dataclasses.replace(params, seed=world_seed(cfg.seed, i))
        worlds.append(generate_world(wp))
    return worlds


EVAL_EPISODE_SEED_BASE = 5_000_000  # grows past any training-episode draw window


def build_eval_pairs(params: WorldParams, base_seed: int, n_worlds: int,
                     n_episodes: int, episode_mode: str = "fine_grained",
                     unseen_offset: int = 0, ambiguity: float | None = None) -> list:
    """(world, episode) pairs for an evaluation split."""
    import dataclasses
    pairs = []
    worlds = []
    for i in range(n_worlds):
        wp = dataclasses.replace(params, seed=world_seed(base_seed, i, unseen_offset))
        if ambiguity is not None:
            wp = dataclasses.replace(wp, ambiguity=ambiguity)
        worlds.append(generate_world(wp))
    for j in range(n_episodes):
        world = worlds[j % len(worlds)]
        ep = make_episode(world, EVAL_EPISODE_SEED_BASE + j, mode=episode_mode)
        pairs.append((world, ep))
    return pairs


def train(model: SusaModel, worlds: list[World], cfg: TrainConfig,
          eval_hook=None, start_iteration: int = 0,
          opt_state: dict | None = None) -> list[dict]:
    """Run the optimization loop; returns the training log (one dict per iter).

    `start_iteration`/`opt_state` resume a checkpointed run: the episode
    schedule stream is replayed so the remaining iterations see exactly the
    data an uninterrupted run would have.
    """
    cfg.validate()
    if start_iteration == 0 and cfg.warm_start_iterations > 0 and cfg.warm_start_branches:
        _warm_start(model, worlds, cfg)
    opt = make_optimizer(cfg, model.named_parameters())
    if opt_state is not None:
        opt.load_state(opt_state)
    pick = rng_for(cfg.seed, "train_schedule")
    log = []
    log_file = open(cfg.log_path, "a" if start_iteration else "w") if cfg.log_path else None
    try:
        for it in range(cfg.iterations):
            mode = "teacher" if it % 2 == 0 else "student"
            world = worlds[int(pick.integers(len(worlds)))]
            episodes = [make_episode(world, int(pick.integers(2 ** 31)),
                                     mode=cfg.episode_mode)
                        for _ in range(cfg.batch_size)]
            if it < start_iteration:
                continue
            if cfg.lr_final is not None:
                # cosine decay from cfg.lr to cfg.lr_final; a function of the
                # global iteration only, so resumed runs stay bit-identical
                frac = it / max(cfg.iterations, 1)
                opt.lr = cfg.lr_final + 0.5 * (cfg.lr - cfg.lr_final) * (
                    1.0 + math.cos(math.pi * frac))
            roll_rng = rng_for(cfg.seed, "rollout", it)
            with T.Tape():
                total, breakdown = episode_loss(model, world, episodes, mode, cfg,
                                                rng=roll_rng)
                if not np.isfinite(total.data):
                    raise FloatingPointError(
                        f"loss diverged (non-finite) at iteration {it}: {breakdown}")
                T.backward(total)
            opt.step()
            opt.zero_grad()
            beta = breakdown.pop("beta")
            entry = {"iter": it, "total": float(total.data),
                     "loss_terms": breakdown, "beta": beta}
            if cfg.eval_interval and (it + 1) % cfg.eval_interval == 0 and eval_hook:
                entry["eval"] = eval_hook(model)
            log.append(entry)
            if log_file:
                log_file.write(json.dumps(entry) + "\n")
                log_file.flush()
            if (cfg.checkpoint_path and cfg.checkpoint_interval
                    and (it + 1) % cfg.checkpoint_interval == 0):
                save_checkpoint(model, cfg.checkpoint_path,
                                extra={"iteration": it + 1,
                                       "opt_state": opt.state()})
    finally:
        if log_file:
            log_file.close()
    return log


def _warm_start(model: SusaModel, worlds: list[World], cfg: TrainConfig):
    """Short imitation-only pre-phase; branches not in warm_start_branches
    are re-initialized afterwards (the partial warm-start toggle)."""
    import dataclasses
    pre_cfg = dataclasses.replace(cfg, iterations=cfg.warm_start_iterations,
                                  lambda2=0.0, warm_start_iterations=0,
                                  warm_start_branches=(), log_path=None,
                                  checkpoint_path=None, eval_interval=0)
    train(model, worlds, pre_cfg)
    fresh = SusaModel(model.config, model.vocab)
    keep_prefixes = tuple(px for b in cfg.warm_start_branches
                          for px in BRANCH_PARAM_PREFIXES[b])
    fresh_params = fresh.named_parameters()
    for name, t in model.named_parameters().items():
        if not any(name.startswith(px) for px in keep_prefixes):
            t.data = fresh_params[name].data.copy()


def evaluate(model: SusaModel, worlds_episodes: list, d_th: float = 3.0,
             ndtw_norm: str = "path") -> tuple[list, dict]:
    """Greedy rollouts over (world, episode) pairs; per-episode metric records."""
    records = []
    results = []
    for world, ep in worlds_episodes:
        res = model.rollout(world, ep, mode="greedy")
        box = res.predicted_object["box"] if res.predicted_object else None
        rec = metrics.compute_all(res.path, ep, world, predicted_box=box,
                                  d_th=d_th, ndtw_norm=ndtw_norm)
        records.append(rec)
        results.append((ep, res, rec))
    return results, metrics.aggregate(records)
