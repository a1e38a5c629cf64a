"""Command-line surface: world/episode generation, training, evaluation,
ablations, delta sweeps, gradient checks, and standalone metric runs."""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import os
import sys

import numpy as np

from . import metrics as met
from . import tensor as T
from .config import RunConfig, load_run_config
from .model import ModelConfig, SusaModel, load_checkpoint, save_checkpoint
from .trainer import (TrainConfig, build_eval_pairs, evaluate,
                      make_training_worlds, train)
from .world import (WorldParams, generate_world, load_episodes, load_world,
                    make_episode, save_episodes, save_world)

ABLATIONS = {
    "none": {},
    "no_tsu": {"branch_mask": (0.0, 1.0, 1.0, 1.0)},
    "no_dsp": {"branch_mask": (1.0, 1.0, 0.0, 1.0)},
    "no_hrf": {"fixed_uniform_beta": True},
    "rgb_only": {"branch_mask": (0.0, 1.0, 0.0, 1.0)},
}


def _fail(msg: str) -> int:
    sys.stderr.write(json.dumps({"error": msg}) + "\n")
    return 1


def _add_config_args(p: argparse.ArgumentParser):
    p.add_argument("--config", help="JSON run-config file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config field, e.g. model.delta=0.5")
    p.add_argument("--seed", type=int, help="override the top-level seed")


def _resolve(args) -> RunConfig:
    overrides = list(args.set)
    if args.seed is not None:
        overrides = [f"seed={args.seed}"] + overrides
        overrides += [f"world.seed={args.seed}", f"model.seed={args.seed}",
                      f"train.seed={args.seed}"]
    return load_run_config(args.config, overrides)


def cmd_gen_world(args) -> int:
    cfg = _resolve(args)
    if args.nodes is not None:
        cfg.world = dataclasses.replace(cfg.world, node_count_min=args.nodes,
                                        node_count_max=args.nodes)
    world = generate_world(cfg.world)
    save_world(world, args.out)
    return 0


def cmd_gen_episodes(args) -> int:
    world = load_world(args.world)
    episodes = [make_episode(world, args.start_seed + i, mode=args.mode)
                for i in range(args.count)]
    save_episodes(episodes, args.out)
    return 0


def cmd_train(args) -> int:
    cfg = _resolve(args)
    os.makedirs(args.out, exist_ok=True)
    ckpt_path = os.path.join(args.out, "checkpoint.json")
    if args.iterations is not None:
        cfg.train = dataclasses.replace(cfg.train, iterations=args.iterations)
    cfg.train = dataclasses.replace(
        cfg.train, log_path=os.path.join(args.out, "train_log.jsonl"),
        checkpoint_path=ckpt_path,
        checkpoint_interval=args.checkpoint_interval)

    worlds = make_training_worlds(cfg.train, cfg.world)
    if args.resume and os.path.exists(ckpt_path):
        model = load_checkpoint(ckpt_path)
        with open(ckpt_path) as f:
            extra = json.load(f).get("extra", {})
        done = extra.get("iteration", 0)
        if done < cfg.train.iterations:
            train(model, worlds, cfg.train, start_iteration=done,
                  opt_state=extra.get("opt_state"))
    else:
        model = SusaModel(cfg.model, worlds[0].vocab)
        train(model, worlds, cfg.train)
    save_checkpoint(model, ckpt_path,
                    extra={"iteration": cfg.train.iterations,
                           "run_config": cfg.to_dict()})
    _emit_training_plots(args.out)
    with open(os.path.join(args.out, "run_config.json"), "w") as f:
        json.dump(cfg.to_dict(), f, indent=2)
    return 0


def _emit_training_plots(out_dir: str):
    """Loss-curve and beta-over-training CSVs from the JSONL training log."""
    log_path = os.path.join(out_dir, "train_log.jsonl")
    if not os.path.exists(log_path):
        return
    rows = []
    with open(log_path) as f:
        for line in f:
            if line.strip():
                rows.append(json.loads(line))
    with open(os.path.join(out_dir, "loss_curve.csv"), "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["iter", "total", "action", "contrastive", "mode"])
        for r in rows:
            w.writerow([r["iter"], r["total"], r["loss_terms"]["action"],
                        r["loss_terms"]["contrastive"], r["loss_terms"]["mode"]])
    with open(os.path.join(out_dir, "beta_over_training.csv"), "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["iter", "beta_sem", "beta_rgb_local", "beta_depth", "beta_rgb_map"])
        for r in rows:
            w.writerow([r["iter"]] + list(r["beta"]))


def _apply_ablation(model_cfg: ModelConfig, name: str) -> ModelConfig:
    if name not in ABLATIONS:
        raise ValueError(f"unknown ablation {name!r}; choose from {sorted(ABLATIONS)}")
    return dataclasses.replace(model_cfg, **ABLATIONS[name])


def cmd_eval(args) -> int:
    cfg = _resolve(args)
    model = load_checkpoint(args.checkpoint)
    model_cfg = _apply_ablation(model.config, args.ablate)
    if args.delta is not None:
        model_cfg = dataclasses.replace(
            model_cfg, delta="adaptive" if args.delta == "adaptive" else float(args.delta))
    if model_cfg != model.config:
        remodel = SusaModel(model_cfg, model.vocab)
        state = model.state_arrays()
        if model_cfg.delta == "adaptive" and "delta_raw" not in state:
            state = dict(state)
            state["delta_raw"] = np.zeros(1)
        if model_cfg.delta != "adaptive" and "delta_raw" in state:
            state = {k: v for k, v in state.items() if k != "delta_raw"}
        remodel.load_state(state)
        model = remodel
    unseen = args.split == "unseen"
    pairs = build_eval_pairs(
        cfg.world, cfg.seed, cfg.train.n_train_worlds, args.episodes,
        episode_mode=args.mode,
        unseen_offset=cfg.unseen_seed_offset if unseen else 0,
        ambiguity=cfg.unseen_ambiguity if unseen else None)
    results, summary = evaluate(model, pairs, d_th=cfg.d_th, ndtw_norm=cfg.ndtw_norm)

    os.makedirs(args.out, exist_ok=True)
    records = [rec for _, _, rec in results]
    met.write_csv(records, [ep.episode_id for ep, _, _ in results],
                  os.path.join(args.out, "metrics.csv"))
    provenance = {"run_config": cfg.to_dict(), "ablate": args.ablate,
                  "split": args.split, "checkpoint": os.path.basename(args.checkpoint)}
    with open(os.path.join(args.out, "metrics.json"), "w") as f:
        json.dump({"summary": {k: summary[k] for k in met.METRIC_ORDER},
                   **provenance}, f, indent=2)
    with open(os.path.join(args.out, "trajectories.json"), "w") as f:
        json.dump({"episodes": [_trajectory_record(ep, res) for ep, res, _ in results],
                   **provenance}, f)
    return 0


def _trajectory_record(ep, res) -> dict:
    return {
        "episode_id": ep.episode_id,
        "instruction": ep.instruction_tokens,
        "gt_path": ep.gt_path,
        "path": res.path,
        "steps": [{"node": s.node, "candidates": s.candidate_ids,
                   "logits": s.logits, "probs": s.probs,
                   "branch_logits": s.branch_logits,
                   "beta": s.beta, "gate": s.gate, "chosen": s.chosen}
                  for s in res.steps],
        "predicted_object": res.predicted_object,
    }


def cmd_delta_sweep(args) -> int:
    cfg = _resolve(args)
    values = args.values.split(",")
    rows = []
    for v in values:
        ns = argparse.Namespace(**vars(args))
        ns.delta = v
        ns.out = os.path.join(args.out, f"delta_{v}")
        ns.ablate = "none"
        rc = cmd_eval(ns)
        if rc != 0:
            return rc
        with open(os.path.join(ns.out, "metrics.json")) as f:
            summary = json.load(f)["summary"]
        rows.append([v, summary["SR"], summary["SPL"], summary["nDTW"], summary["sDTW"]])
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "delta_sweep.csv"), "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["delta", "SR", "SPL", "nDTW", "sDTW"])
        w.writerows(rows)
    return 0


def cmd_grad_check(args) -> int:
    from .gradcheck import op_grad_check_suite
    report = op_grad_check_suite(seeds=args.seeds, tol=args.tol)
    print(json.dumps(report, indent=2))
    return 0 if report["passed"] else 1


def cmd_metrics(args) -> int:
    cfg = _resolve(args)
    world = load_world(args.world)
    episodes = {ep.episode_id: ep for ep in load_episodes(args.episodes)}
    with open(args.trajectories) as f:
        blob = json.load(f)
    records, ids = [], []
    for entry in blob["episodes"] if "episodes" in blob else blob:
        ep = episodes[entry["episode_id"]]
        box = (entry.get("predicted_object") or {}).get("box")
        records.append(met.compute_all(entry["path"], ep, world, predicted_box=box,
                                       d_th=cfg.d_th, ndtw_norm=cfg.ndtw_norm))
        ids.append(ep.episode_id)
    met.write_csv(records, ids, args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="susa",
        description="Graph-world VLN simulator and hybrid semantic/spatial agent. "
                    "Default seed comes from $SUSA_SEED when set.")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-world", help="generate a world JSON file")
    _add_config_args(g)
    g.add_argument("--nodes", type=int, help="force an exact node count")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_world)

    g = sub.add_parser("gen-episodes", help="generate an episode JSONL file")
    _add_config_args(g)
    g.add_argument("--world", required=True)
    g.add_argument("--count", type=int, default=20)
    g.add_argument("--start-seed", type=int, default=0)
    g.add_argument("--mode", choices=["fine_grained", "goal_oriented"],
                   default="fine_grained")
    g.set_defaults(func=cmd_gen_episodes)
    g.add_argument("--out", required=True)

    g = sub.add_parser("train", help="behavior-cloning fine-tuning")
    _add_config_args(g)
    g.add_argument("--out", required=True)
    g.add_argument("--iterations", type=int)
    g.add_argument("--resume", action="store_true")
    g.add_argument("--checkpoint-interval", type=int, default=0)
    g.set_defaults(func=cmd_train)

    g = sub.add_parser("eval", help="evaluate a checkpoint on a split")
    _add_config_args(g)
    g.add_argument("--checkpoint", required=True)
    g.add_argument("--episodes", type=int, default=50)
    g.add_argument("--split", choices=["seen", "unseen"], default="seen")
    g.add_argument("--ablate", choices=sorted(ABLATIONS), default="none")
    g.add_argument("--mode", choices=["fine_grained", "goal_oriented"],
                   default="fine_grained")
    g.add_argument("--delta", help="override the balance factor at eval time")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_eval, delta=None)

    g = sub.add_parser("delta-sweep", help="evaluate across balance-factor values")
    _add_config_args(g)
    g.add_argument("--checkpoint", required=True)
    g.add_argument("--values", default="0,0.5,1,adaptive")
    g.add_argument("--episodes", type=int, default=50)
    g.add_argument("--split", choices=["seen", "unseen"], default="seen")
    g.add_argument("--mode", choices=["fine_grained", "goal_oriented"],
                   default="fine_grained")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_delta_sweep)

    g = sub.add_parser("grad-check", help="finite-difference check of every op")
    g.add_argument("--seeds", type=int, default=20)
    g.add_argument("--tol", type=float, default=1e-4)
    g.set_defaults(func=cmd_grad_check)

    g = sub.add_parser("metrics", help="score a trajectory dump against episodes")
    _add_config_args(g)
    g.add_argument("--world", required=True)
    g.add_argument("--episodes", required=True)
    g.add_argument("--trajectories", required=True)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_metrics)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # machine-readable error on stderr, nonzero exit
        return _fail(f"{type(exc).__name__}: {exc}")


if __name__ == "__main__":
    sys.exit(main())
