from __future__ import annotations

import csv
import json
import shutil

import numpy as np
import pytest

from cablewhip.cli import main
from cablewhip.policy import Dataset, MlpPolicy
from cablewhip.tasks import observation_size, randomize_instance

SMOKE = {
    "find_base": {"n_candidates": 2, "n_settings": 10},
    "collection": {"N": 3},
    "train": {"epochs": 50},
    "trials": 2,
}


def write_config(path, cfg):
    path.write_text(json.dumps(cfg))
    return str(path)


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """find-base, collect, train and eval on a smoke configuration."""
    root = tmp_path_factory.mktemp("cli")
    cfg = write_config(root / "smoke.json", SMOKE)
    out = root / "run"
    codes = [main([cmd, "--config", cfg, "--out", str(out)]) for cmd in ("find-base", "collect", "train")]
    codes.append(main(["eval", "--actor", "learned", "--config", cfg, "--out", str(out)]))
    return root, out, cfg, codes


@pytest.mark.slow
def test_pipeline_exit_codes(pipeline):
    assert pipeline[3] == [0, 0, 0, 0]


@pytest.mark.slow
def test_base_action_schema(pipeline):
    _, out, _, _ = pipeline
    d = json.loads((out / "base_action.json").read_text())
    assert d["task"] == "vaulting" and d["seed"] == 0
    assert len(d["apex_joints"]) == 3 and all(np.isfinite(d["apex_joints"]))
    assert 1 <= d["score"] <= 10 and d["score"] == max(d["scores"])


@pytest.mark.slow
def test_dataset_schema(pipeline):
    _, out, _, _ = pipeline
    lines = (out / "dataset.jsonl").read_text().splitlines()
    assert len(lines) == SMOKE["collection"]["N"]
    for line in lines:
        rec = json.loads(line)
        assert len(rec["observation"]) == observation_size("vaulting")
        assert len(rec["action"]) == 3
        assert "instance" in rec and rec["attempt"] >= 0
    meta = json.loads((out / "dataset.meta.json").read_text())
    assert meta["seed"] == 0 and meta["complete"] and len(meta["config_hash"]) == 16


@pytest.mark.slow
def test_policy_and_loss_curve(pipeline):
    _, out, _, _ = pipeline
    pol = MlpPolicy.load(out / "policy.json")
    assert pol.obs_dim == observation_size("vaulting")
    assert pol.metadata["seed"] == 0 and pol.metadata["records"] == 3
    with open(out / "loss_curve.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["epoch", "loss"] and len(rows) == SMOKE["train"]["epochs"] + 1
    losses = [float(r[1]) for r in rows[1:]]
    assert losses[-1] < losses[0]


@pytest.mark.slow
def test_results_schema(pipeline):
    _, out, _, _ = pipeline
    res = json.loads((out / "results.json").read_text())
    assert res["actor"] == "learned" and res["seed"] == 0
    assert set(res["tiers"]) == {"1", "2", "3"}
    for tier in res["tiers"].values():
        assert tier["trials"] == 2 and tier["rate"] == tier["successes"] / 2
    assert len(res["records"]) == 6
    assert sum(r["success"] for r in res["records"]) == sum(t["successes"] for t in res["tiers"].values())


@pytest.mark.slow
def test_train_zero_learning_rate_keeps_initial_weights(pipeline, tmp_path):
    _, out, _, _ = pipeline
    shutil.copy(out / "dataset.jsonl", tmp_path / "dataset.jsonl")
    shutil.copy(out / "dataset.meta.json", tmp_path / "dataset.meta.json")
    cfg = write_config(tmp_path / "c.json", {**SMOKE, "seed": 4, "train": {"epochs": 5, "learning_rate": 0.0}})
    assert main(["train", "--config", cfg, "--out", str(tmp_path)]) == 0
    trained = MlpPolicy.load(tmp_path / "policy.json")
    init = MlpPolicy.create(observation_size("vaulting"), seed=4)
    assert np.array_equal(trained.get_params(), init.get_params())


@pytest.mark.slow
def test_eval_baselines_single_tier(pipeline, tmp_path, capsys):
    _, _, cfg, _ = pipeline
    for actor in ("fixed", "varying"):
        assert main(["eval", "--actor", actor, "--tier", "1", "--trials", "1", "--config", cfg,
                     "--out", str(tmp_path)]) == 0
        res = json.loads((tmp_path / "results.json").read_text())
        assert res["actor"] == actor and list(res["tiers"]) == ["1"]
    assert "tier 1:" in capsys.readouterr().out


@pytest.mark.slow
def test_bench_smoke(pipeline, tmp_path):
    _, out, _, _ = pipeline
    (tmp_path / "vaulting").mkdir()
    shutil.copy(out / "policy.json", tmp_path / "vaulting" / "policy.json")
    cfg = write_config(tmp_path / "b.json", {**SMOKE, "trials": 1,
                                             "bench": {"tasks": ["vaulting"], "presets": ["16awg_orange"],
                                                       "sweep_trials": 1}})
    assert main(["bench", "--config", cfg, "--out", str(tmp_path)]) == 0
    report = json.loads((tmp_path / "bench.json").read_text())
    assert set(report["tasks"]["vaulting"]) == {"fixed", "varying", "learned"}
    table = (tmp_path / "bench.txt").read_text()
    for name in ("fixed", "varying", "learned", "Tier 3", "16awg_orange"):
        assert name in table


def test_replay_writes_traces(tmp_path):
    inst = randomize_instance("vaulting", 1, 0)
    path = inst.save(tmp_path / "inst.json")
    assert main(["replay", "--instance", str(path), "--action", "0.0", "-1.6", "0.4", "--out", str(tmp_path)]) == 0
    rep = json.loads((tmp_path / "replay.json").read_text())
    assert isinstance(rep["success"], bool) and rep["frames"] > 0
    assert (tmp_path / "trace.csv").read_text().startswith("time_s,particle_index,x,y,z")
    assert (tmp_path / "trajectory.csv").exists()


def test_user_errors_exit_one(tmp_path):
    out = str(tmp_path)
    assert main(["train", "--out", out]) == 1  # no dataset
    assert main(["collect", "--out", out]) == 1  # no base action
    assert main(["eval", "--actor", "learned", "--out", out]) == 1  # no policy
    assert main(["find-base", "--config", str(tmp_path / "missing.json"), "--out", out]) == 1
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["find-base", "--config", str(bad), "--out", out]) == 1
    preset = write_config(tmp_path / "preset.json", {"cable_preset": "no_such_cable"})
    assert main(["find-base", "--config", preset, "--out", out]) == 1
    assert main(["eval", "--actor", "fixed", "--trials", "0", "--out", out]) == 1
    assert main(["replay", "--instance", str(tmp_path / "none.json"), "--action", "0", "-1", "0", "--out", out]) == 1
    with pytest.raises(SystemExit) as err:
        main(["find-base", "--task", "juggling", "--out", out])
    assert err.value.code == 1
    with pytest.raises(SystemExit) as err:
        main(["frobnicate"])
    assert err.value.code == 1


def test_partial_dataset_exits_two_and_keeps_file(tmp_path, capsys):
    # a base action outside the joint limits never yields a trajectory
    (tmp_path / "base_action.json").write_text(json.dumps({"task": "vaulting", "apex_joints": [0.0, 0.5, 0.3]}))
    cfg = write_config(tmp_path / "c.json", {"collection": {"N": 2, "max_attempts_per_instance": 1,
                                                            "instance_budget_factor": 1}})
    assert main(["collect", "--config", cfg, "--out", str(tmp_path)]) == 2
    assert "failed" in capsys.readouterr().err
    assert len(Dataset.load(tmp_path / "dataset.jsonl")) == 0
    assert json.loads((tmp_path / "dataset.meta.json").read_text())["complete"] is False
