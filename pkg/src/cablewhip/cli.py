"""Command-line entry point: find-base, collect, train, eval, bench, replay.

Every subcommand works on an output directory (``--out``). A task's files
live directly in it: ``base_action.json``, ``dataset.jsonl``,
``policy.json``, ``loss_curve.csv`` and ``results.json``. ``bench`` looks for
per-task policies in ``<out>/<task>/policy.json`` and trains missing ones.

Exit codes: 0 success, 1 user error (bad arguments, missing inputs),
2 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from . import cablesim as cs
from . import indy
from .minjerk import ApexAction, trajectory_function
from .policy import Dataset, MlpPolicy, TrainConfig, TrainingDivergedError, atomic_write_text, train
from .tasks import TaskInstance, TaskKind, check_goal

log = logging.getLogger("cablewhip")

DEFAULTS: Dict = {
    "task": "vaulting",
    "seed": 0,
    "cable_preset": cs.DEFAULT_PRESET,
    "trials": 20,
    "find_base": {"n_candidates": 60, "n_settings": 10},
    "collection": {"N": 100, "noise_scale": 0.05, "max_attempts_per_instance": 25, "random_walk": True},
    "train": {"learning_rate": 0.03, "batch_size": 32, "epochs": 500, "weight_decay": 0.0},
    "bench": {"tasks": ["vaulting", "knocking", "weaving"], "presets": list(cs.PRESET_NAMES),
              "sweep_trials": 20, "train_preset": cs.DEFAULT_PRESET},
}


class UserError(Exception):
    """Bad arguments or missing inputs (exit code 1)."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


# -------------------------------------------------------------------- config

def _merge(base: Dict, over: Dict) -> Dict:
    out = dict(base)
    for k, v in over.items():
        out[k] = _merge(out[k], v) if isinstance(v, dict) and isinstance(out.get(k), dict) else v
    return out


def load_config(args) -> Dict:
    cfg = json.loads(json.dumps(DEFAULTS))
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise UserError(f"config file {path} not found")
        try:
            cfg = _merge(cfg, json.loads(path.read_text()))
        except json.JSONDecodeError as exc:
            raise UserError(f"config file {path} is not valid JSON: {exc}") from None
    for key in ("task", "seed", "trials"):
        v = getattr(args, key, None)
        if v is not None:
            cfg[key] = v
    if getattr(args, "tier", None) is not None:
        cfg["tier"] = args.tier
    if cfg["cable_preset"] not in cs.PRESET_NAMES and not Path(cfg["cable_preset"]).exists():
        raise UserError(f"unknown cable preset {cfg['cable_preset']!r}")
    try:
        TaskKind.parse(cfg["task"])
    except ValueError:
        raise UserError(f"unknown task {cfg['task']!r}") from None
    return cfg


def config_hash(cfg: Dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()[:16]


def _stamp(cfg: Dict, payload: Dict) -> Dict:
    return {"seed": cfg["seed"], "config_hash": config_hash(cfg), **payload}


def _write_json(path: Path, payload) -> Path:
    return atomic_write_text(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _read_json(path: Path, what: str) -> Dict:
    if not path.exists():
        raise UserError(f"{what} {path} not found")
    return json.loads(path.read_text())


def _cable(cfg: Dict, preset: Optional[str] = None) -> cs.CableModel:
    return cs.load_cable(preset or cfg["cable_preset"])


# ---------------------------------------------------------------- subcommands

def cmd_find_base(cfg: Dict, out: Path, task: Optional[str] = None) -> Dict:
    kind = TaskKind.parse(task or cfg["task"])
    base = indy.find_base_action(kind, cfg["seed"], cable=_cable(cfg), **cfg["find_base"])
    payload = _stamp(cfg, base.to_dict())
    _write_json(out / "base_action.json", payload)
    return payload


def cmd_collect(cfg: Dict, out: Path, task: Optional[str] = None) -> Dataset:
    kind = TaskKind.parse(task or cfg["task"])
    base = indy.BaseAction.from_dict(_read_json(out / "base_action.json", "base action file"))
    if base.task is not kind:
        raise UserError(f"base action is for {base.task.value}, not {kind.value}")
    config = indy.CollectionConfig(**cfg["collection"])
    try:
        data = indy.collect(kind, base, config, cfg["seed"], _cable(cfg))
    except indy.PartialDatasetError as exc:
        exc.dataset.metadata.update(seed=cfg["seed"], config_hash=config_hash(cfg))
        exc.dataset.save(out / "dataset.jsonl")
        raise
    data.metadata.update(seed=cfg["seed"], config_hash=config_hash(cfg))
    data.save(out / "dataset.jsonl")
    return data


def cmd_train(cfg: Dict, out: Path) -> MlpPolicy:
    path = out / "dataset.jsonl"
    if not path.exists():
        raise UserError(f"dataset {path} not found")
    data = Dataset.load(path)
    tc = TrainConfig(seed=cfg["seed"], **cfg["train"])
    policy, curve = train(MlpPolicy.create(data.obs_dim, tc.hidden, seed=cfg["seed"]), data, tc)
    policy.metadata.update(seed=cfg["seed"], config_hash=config_hash(cfg), task=data.metadata.get("task"),
                           cable_preset=data.metadata.get("cable_preset"), records=len(data))
    policy.save(out / "policy.json")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["epoch", "loss"])
    for i, v in enumerate(curve):
        w.writerow([i, repr(float(v))])
    atomic_write_text(out / "loss_curve.csv", buf.getvalue())
    return policy


def _actor(name: str, out: Path) -> indy.Actor:
    if name == "fixed":
        return indy.FixedApexActor()
    if name == "varying":
        return indy.VaryingApexActor()
    if name == "learned":
        path = out / "policy.json"
        if not path.exists():
            raise UserError(f"policy {path} not found; run train first")
        return indy.PolicyActor(MlpPolicy.load(path))
    raise UserError(f"unknown actor {name!r}")


def _result_payload(cfg: Dict, res: indy.EvalResult, preset: str) -> Dict:
    tiers = {k: {"successes": res.counts[k], "trials": res.trials[k], "rate": res.rates()[k]} for k in res.counts}
    return _stamp(cfg, {"task": res.task.value, "actor": res.actor, "cable_preset": preset, "tiers": tiers,
                        "records": [r.to_dict() for r in res.records]})


def cmd_eval(cfg: Dict, out: Path, actor_name: str) -> Dict:
    kind = TaskKind.parse(cfg["task"])
    tiers = [cfg["tier"]] if cfg.get("tier") is not None else None
    res = indy.evaluate(_actor(actor_name, out), kind, tiers, cfg["trials"], cfg["seed"], _cable(cfg))
    payload = _result_payload(cfg, res, cfg["cable_preset"])
    _write_json(out / "results.json", payload)
    return payload


def _table(title: str, cols: List[str], rows: Dict[str, Dict[str, str]]) -> str:
    head = ["Method"] + cols
    body = [[name] + [rows[name].get(c, "-") for c in cols] for name in rows]
    widths = [max(len(str(r[i])) for r in [head] + body) for i in range(len(head))]
    fmt = "  ".join(f"{{:<{w}}}" for w in widths)
    lines = [title, fmt.format(*head)] + [fmt.format(*map(str, r)) for r in body]
    return "\n".join(lines)


def _task_policy(cfg: Dict, out: Path, task: str) -> MlpPolicy:
    """Policy for ``task`` trained on the bench's training preset, built if missing."""
    tdir = out / task
    if not (tdir / "policy.json").exists():
        tcfg = {**cfg, "task": task, "cable_preset": cfg["bench"]["train_preset"]}
        tdir.mkdir(parents=True, exist_ok=True)
        if not (tdir / "base_action.json").exists():
            cmd_find_base(tcfg, tdir, task)
        if not (tdir / "dataset.jsonl").exists():
            cmd_collect(tcfg, tdir, task)
        cmd_train(tcfg, tdir)
    return MlpPolicy.load(tdir / "policy.json")


def cmd_bench(cfg: Dict, out: Path) -> Dict:
    """All actors on all tasks with a shared seed, plus a cable-preset sweep."""
    bench = cfg["bench"]
    train_cable = _cable(cfg, bench["train_preset"])
    report: Dict = {"tasks": {}, "preset_sweep": {}}
    texts = []
    policies: Dict[str, Optional[MlpPolicy]] = {}
    for task in bench["tasks"]:
        kind = TaskKind.parse(task)
        try:
            policies[task] = _task_policy(cfg, out, task)
        except Exception as exc:  # keep going; the learned cells are marked
            log.error("no policy for %s: %s", task, exc)
            policies[task] = None
        actors = [indy.FixedApexActor(), indy.VaryingApexActor()]
        if policies[task] is not None:
            actors.append(indy.PolicyActor(policies[task]))
        cells: Dict[str, Dict] = {}
        rows: Dict[str, Dict[str, str]] = {}
        for actor in actors:
            try:
                res = indy.evaluate(actor, kind, None, cfg["trials"], cfg["seed"], train_cable)
                cells[actor.name] = _result_payload(cfg, res, bench["train_preset"])
                rows[actor.name] = {k: f"{v}/{res.trials[k]}" for k, v in res.counts.items()}
            except Exception as exc:
                cells[actor.name] = {"error": str(exc)}
                rows[actor.name] = {}
        if policies[task] is None:
            cells["learned"] = {"error": "policy unavailable"}
            rows["learned"] = {}
        cols = ["all"] if kind is TaskKind.WEAVING else ["1", "2", "3"]
        rows = {name: {c: rows[name].get(c, "failed") for c in cols} for name in ("fixed", "varying", "learned")}
        report["tasks"][task] = cells
        texts.append(_table(f"{task} (successes / trials)", ["Tier " + c if c != "all" else "All" for c in cols],
                            {n: {("Tier " + c if c != "all" else "All"): v for c, v in r.items()}
                             for n, r in rows.items()}))
    sweep_rows: Dict[str, Dict[str, str]] = {}
    for preset in bench["presets"]:
        cable = _cable(cfg, preset)
        label = f"{preset} ({cable.total_mass:g} kg, {cable.total_length:g} m)"
        sweep_rows[label] = {}
        report["preset_sweep"][preset] = {}
        for task in bench["tasks"]:
            if policies.get(task) is None:
                report["preset_sweep"][preset][task] = {"error": "policy unavailable"}
                sweep_rows[label][task] = "failed"
                continue
            try:
                res = indy.evaluate(indy.PolicyActor(policies[task]), task, (None,), bench["sweep_trials"],
                                    cfg["seed"], cable)
                report["preset_sweep"][preset][task] = _result_payload(cfg, res, preset)
                sweep_rows[label][task] = f"{res.counts['all']}/{res.trials['all']}"
            except Exception as exc:
                report["preset_sweep"][preset][task] = {"error": str(exc)}
                sweep_rows[label][task] = "failed"
    texts.append(_table("learned policy per cable preset (successes / trials)", list(bench["tasks"]), sweep_rows))
    payload = _stamp(cfg, report)
    _write_json(out / "bench.json", payload)
    atomic_write_text(out / "bench.txt", "\n\n".join(texts) + "\n")
    return payload


def cmd_replay(cfg: Dict, out: Path, instance_file: str, action: List[float]) -> Dict:
    inst = TaskInstance.load(_existing(instance_file, "instance file"))
    cable = cs.load_cable(inst.scene.cable_preset)
    act = ApexAction(action)
    state = cs.taut_pull_reset(cable, inst.scene)
    traj = trajectory_function(inst.kind, act)
    res = cs.rollout(cable, inst.scene, state, traj)
    ok = check_goal(inst.kind, res, inst.scene, cable.link_radius)
    traj_path = out / "trajectory.csv"
    tmp = traj.write_csv(traj_path.with_suffix(".csv.tmp"))
    tmp.replace(traj_path)
    cs.write_trace_csv(res, out / "trace.csv")
    payload = _stamp(cfg, {"task": inst.kind.value, "apex_joints": list(act.apex_joints), "success": bool(ok),
                           "duration": traj.duration, "frames": int(len(res.times))})
    _write_json(out / "replay.json", payload)
    return payload


def _existing(path: str, what: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise UserError(f"{what} {p} not found")
    return p


# ----------------------------------------------------------------------- main

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--seed", type=int, help="master seed")
    common.add_argument("--task", choices=[k.value for k in TaskKind])
    common.add_argument("--out", default="runs", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")
    p = _Parser(prog="cablewhip", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("find-base", parents=[common], help="search a base apex action")
    sub.add_parser("collect", parents=[common], help="collect a dataset around the base action")
    sub.add_parser("train", parents=[common], help="train a policy on the dataset")
    ev = sub.add_parser("eval", parents=[common], help="evaluate one actor")
    ev.add_argument("--actor", choices=["fixed", "varying", "learned"], required=True)
    ev.add_argument("--tier", type=int, choices=[1, 2, 3])
    ev.add_argument("--trials", type=int)
    be = sub.add_parser("bench", parents=[common], help="compare all actors and cable presets")
    be.add_argument("--trials", type=int)
    rp = sub.add_parser("replay", parents=[common], help="single rollout with full trace export")
    rp.add_argument("--instance", required=True, help="task instance JSON")
    rp.add_argument("--action", type=float, nargs=3, required=True, metavar=("BASE", "SHOULDER", "ELBOW"))
    return p


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if getattr(args, "trials", None) is not None and args.trials < 1:
            raise UserError("--trials must be positive")
        cfg = load_config(args)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        if args.command == "find-base":
            payload = cmd_find_base(cfg, out)
            print(f"base action {payload['apex_joints']} scored {payload['score']}/{cfg['find_base']['n_settings']}")
        elif args.command == "collect":
            data = cmd_collect(cfg, out)
            print(f"collected {len(data)} records from {data.metadata['instances']} instances")
        elif args.command == "train":
            cmd_train(cfg, out)
            print(f"wrote {out / 'policy.json'}")
        elif args.command == "eval":
            payload = cmd_eval(cfg, out, args.actor)
            print(" ".join(f"tier {k}: {v['successes']}/{v['trials']}" for k, v in payload["tiers"].items()))
        elif args.command == "bench":
            cmd_bench(cfg, out)
            print((out / "bench.txt").read_text(), end="")
        elif args.command == "replay":
            payload = cmd_replay(cfg, out, args.instance, args.action)
            print(f"success={payload['success']} duration={payload['duration']:.3f}s")
    except UserError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (indy.NoViableBaseActionError, indy.PartialDatasetError, TrainingDivergedError,
            cs.SimulationDivergedError, RuntimeError, ValueError) as exc:
        print(f"failed: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
