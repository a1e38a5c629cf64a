"""End-to-end CLI tests: generation round-trips, tiny train/eval runs,
determinism of outputs, ablation plumbing, and the sweep/check commands."""
import json
import os

import pytest

from susa.cli import main
from susa.world import load_episodes, load_world, world_to_dict

SMALL = ["--set", "world.node_count_min=5", "--set", "world.node_count_max=5",
         "--set", "world.room_count=2", "--set", "world.n_views=4",
         "--set", "world.d_v=8", "--set", "world.landmark_vocab_size=8",
         "--set", "model.d=8", "--set", "train.n_train_worlds=1",
         "--set", "train.batch_size=2", "--set", "train.iterations=2"]


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    """One tiny trained checkpoint shared by the eval-side tests."""
    d = tmp_path_factory.mktemp("cli")
    rc = main(["train", "--seed", "3", *SMALL, "--out", str(d / "train")])
    assert rc == 0
    return d


def test_gen_world_roundtrip_and_determinism(tmp_path):
    out1, out2 = tmp_path / "w1.json", tmp_path / "w2.json"
    assert main(["gen-world", "--seed", "5", *SMALL, "--out", str(out1)]) == 0
    assert main(["gen-world", "--seed", "5", *SMALL, "--out", str(out2)]) == 0
    assert out1.read_bytes() == out2.read_bytes()
    world = load_world(str(out1))
    assert len(world.graph.nodes) == 5
    assert world_to_dict(world) == json.loads(out1.read_text())


def test_gen_episodes_roundtrip(tmp_path):
    wpath = tmp_path / "w.json"
    epath = tmp_path / "eps.jsonl"
    assert main(["gen-world", "--seed", "5", *SMALL, "--out", str(wpath)]) == 0
    assert main(["gen-episodes", "--world", str(wpath), "--count", "4",
                 "--start-seed", "9", "--out", str(epath)]) == 0
    eps = load_episodes(str(epath))
    assert len(eps) == 4
    world = load_world(str(wpath))
    for ep in eps:
        assert ep.gt_path[0] == ep.start_node and ep.gt_path[-1] == ep.goal_node
        assert all(n in world.panoramas for n in ep.gt_path)


def test_train_writes_artifacts(run_dir):
    out = run_dir / "train"
    for name in ("checkpoint.json", "train_log.jsonl", "loss_curve.csv",
                 "beta_over_training.csv", "run_config.json"):
        assert (out / name).exists(), name
    log_lines = [json.loads(l) for l in
                 (out / "train_log.jsonl").read_text().splitlines()]
    assert len(log_lines) == 2
    assert {"iter", "total", "loss_terms", "beta"} <= set(log_lines[0])


def test_train_resume_extends_run(run_dir, tmp_path):
    out = tmp_path / "resume"
    args = ["train", "--seed", "3", *SMALL, "--out", str(out)]
    assert main(args) == 0
    ckpt = json.loads((out / "checkpoint.json").read_text())
    assert ckpt["extra"]["iteration"] == 2
    assert main(args + ["--iterations", "4", "--resume"]) == 0
    ckpt = json.loads((out / "checkpoint.json").read_text())
    assert ckpt["extra"]["iteration"] == 4


def test_eval_outputs_are_byte_identical(run_dir):
    ckpt = str(run_dir / "train" / "checkpoint.json")
    outs = []
    for tag in ("e1", "e2"):
        out = run_dir / tag
        rc = main(["eval", "--seed", "3", *SMALL, "--checkpoint", ckpt,
                   "--episodes", "4", "--out", str(out)])
        assert rc == 0
        outs.append(out)
    for name in ("metrics.csv", "trajectories.json", "metrics.json"):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes(), name


def test_eval_ablation_changes_model_but_runs(run_dir):
    ckpt = str(run_dir / "train" / "checkpoint.json")
    out = run_dir / "ablate"
    rc = main(["eval", "--seed", "3", *SMALL, "--checkpoint", ckpt,
               "--episodes", "2", "--ablate", "rgb_only", "--out", str(out)])
    assert rc == 0
    blob = json.loads((out / "metrics.json").read_text())
    assert blob["ablate"] == "rgb_only"
    assert set(blob["summary"]) >= {"SR", "SPL", "nDTW"}


def test_delta_sweep_schema(run_dir):
    ckpt = str(run_dir / "train" / "checkpoint.json")
    out = run_dir / "sweep"
    rc = main(["delta-sweep", "--seed", "3", *SMALL, "--checkpoint", ckpt,
               "--values", "0,1", "--episodes", "2", "--out", str(out)])
    assert rc == 0
    lines = (out / "delta_sweep.csv").read_text().splitlines()
    assert lines[0] == "delta,SR,SPL,nDTW,sDTW"
    assert len(lines) == 3


def test_metrics_command_rescores_trajectories(run_dir, tmp_path):
    ckpt = str(run_dir / "train" / "checkpoint.json")
    wpath = tmp_path / "w.json"
    epath = tmp_path / "eps.jsonl"
    # regenerate the eval world/episodes the eval command used (seed 3, index 0)
    assert main(["gen-world", "--seed", "3000", *SMALL, "--out", str(wpath)]) == 0
    world = load_world(str(wpath))
    from susa.trainer import EVAL_EPISODE_SEED_BASE
    from susa.world import make_episode, save_episodes
    eps = [make_episode(world, EVAL_EPISODE_SEED_BASE + j) for j in range(4)]
    save_episodes(eps, str(epath))
    out_eval = run_dir / "e1"
    out_csv = tmp_path / "rescored.csv"
    rc = main(["metrics", "--seed", "3", "--world", str(wpath),
               "--episodes", str(epath),
               "--trajectories", str(out_eval / "trajectories.json"),
               "--out", str(out_csv)])
    assert rc == 0
    rescored = out_csv.read_text()
    original = (out_eval / "metrics.csv").read_text()
    assert rescored == original


def test_cli_errors_are_machine_readable(tmp_path, capsys):
    rc = main(["eval", "--checkpoint", str(tmp_path / "missing.json"),
               "--out", str(tmp_path / "o")])
    assert rc == 1
    err = capsys.readouterr().err
    assert json.loads(err.strip())["error"].startswith("FileNotFoundError")
