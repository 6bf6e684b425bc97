"""Self-supervised data collection, baselines and evaluation.

A base apex action is found by scoring random candidates on a fixed set of
randomised scenes. Collection then perturbs that action until it succeeds on
each new scene and keeps the successful (observation, action) pairs. Every
attempt starts from a taut-pull reset of the cable.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from importlib import resources
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from . import cablesim as cs
from .arm import ArmModel, JointLimitError, OutOfReachError, apex_ik, load_arm
from .minjerk import WRIST, ApexAction, ApexLimitError, NoFeasibleTrajectoryError, trajectory_function
from .policy import Dataset, MlpPolicy, predict
from .tasks import (
    LATERAL_RANGE,
    NotSettledError,
    TaskInstance,
    TaskKind,
    Tier,
    check_goal,
    left_limit,
    observation_size,
    observe,
    randomize_instance,
)
from .cablesim import Obstacle, SceneConfig, TargetObject

log = logging.getLogger(__name__)

# sampling box for candidate apex actions (base, shoulder, elbow), rad
ACTION_LOW = np.array([-0.6, -2.4, 0.0])
ACTION_HIGH = np.array([0.6, -0.6, 1.8])
APEX_OFFSET = {TaskKind.VAULTING: 0.15, TaskKind.KNOCKING: 0.10, TaskKind.WEAVING: 0.15}
# varying-apex points beyond the arm's reach are pulled toward the shoulder,
# to this fraction of the farthest reachable point on that line
REACH_FRACTION = 0.98


class NoViableBaseActionError(RuntimeError):
    """Every candidate failed on every setting."""


class PartialDatasetError(RuntimeError):
    """The instance budget ran out before N records were collected."""

    def __init__(self, message: str, dataset: Dataset):
        super().__init__(message)
        self.dataset = dataset


@dataclass(frozen=True)
class BaseAction:
    task: TaskKind
    action: ApexAction
    score: int = 0
    duration: float = 0.0
    index: int = -1
    scores: tuple = ()

    def to_dict(self) -> dict:
        return {"task": self.task.value, "apex_joints": list(self.action.apex_joints), "score": self.score,
                "duration": self.duration, "index": self.index, "scores": list(self.scores)}

    @classmethod
    def from_dict(cls, d: dict) -> "BaseAction":
        return cls(TaskKind.parse(d["task"]), ApexAction(d["apex_joints"]), int(d.get("score", 0)),
                   float(d.get("duration", 0.0)), int(d.get("index", -1)), tuple(d.get("scores", ())))


@dataclass(frozen=True)
class CollectionConfig:
    N: int = 100
    noise_scale: float = 0.05
    max_attempts_per_instance: int = 25
    instance_budget_factor: int = 10
    random_walk: bool = True
    settle_time: float = cs.SETTLE_CAP

    def __post_init__(self):
        if self.N < 1 or self.noise_scale < 0 or self.max_attempts_per_instance < 1:
            raise ValueError("invalid collection configuration")


@dataclass
class TrialRecord:
    instance: TaskInstance
    action: Optional[ApexAction]
    success: bool
    attempt: int = 0
    duration: float = float("nan")
    error: Optional[str] = None

    def to_dict(self) -> dict:
        return {
            "instance": self.instance.to_dict(),
            "tier": int(self.instance.tier),
            "action": None if self.action is None else list(self.action.apex_joints),
            "success": self.success,
            "attempt": self.attempt,
            "duration": None if not np.isfinite(self.duration) else self.duration,
            "error": self.error,
        }


# ------------------------------------------------------------------ trials

def run_trial(
    kind,
    instance: TaskInstance,
    action: Optional[ApexAction],
    cable: Optional[cs.CableModel] = None,
    settle_time: float = cs.SETTLE_CAP,
    reset: bool = True,
    state: Optional[cs.CableState] = None,
) -> TrialRecord:
    """Reset, execute the trajectory through ``action`` and check the goal.

    Failures of any stage (unreachable apex, infeasible trajectory,
    simulator divergence, unsettled cable) give an unsuccessful record with
    the reason in ``error``.
    """
    kind = TaskKind.parse(kind)
    cable = cable or cs.load_cable(instance.scene.cable_preset)
    if reset:
        state = cs.taut_pull_reset(cable, instance.scene)
    if action is None:
        return TrialRecord(instance, None, False, error="no action")
    try:
        traj = trajectory_function(kind, action)
    except (ApexLimitError, NoFeasibleTrajectoryError) as exc:
        return TrialRecord(instance, action, False, error=f"trajectory: {exc}")
    try:
        res = cs.rollout(cable, instance.scene, state, traj, settle_time=settle_time)
        ok = check_goal(kind, res, instance.scene, cable.link_radius)
    except cs.SimulationDivergedError as exc:
        return TrialRecord(instance, action, False, duration=traj.duration, error=f"diverged: {exc}")
    except NotSettledError as exc:
        return TrialRecord(instance, action, False, duration=traj.duration, error=f"not settled: {exc}")
    return TrialRecord(instance, action, bool(ok), duration=traj.duration)


def _clip_box(a: np.ndarray) -> np.ndarray:
    return np.clip(a, ACTION_LOW, ACTION_HIGH)


def _instance_seed(master: int, *keys: int) -> int:
    return int(np.random.SeedSequence([int(master) & 0xFFFFFFFF, *[int(k) for k in keys]]).generate_state(1)[0])


# --------------------------------------------------------------- base action

def find_base_action(
    task_kind,
    rng_seed: int = 0,
    n_candidates: int = 60,
    n_settings: int = 10,
    cable: Optional[cs.CableModel] = None,
    candidates: Optional[Sequence[ApexAction]] = None,
) -> BaseAction:
    """Best of ``n_candidates`` random apex actions over ``n_settings`` random scenes.

    Ties go to the shorter trajectory, then to the lower candidate index.

    Raises
    ------
    NoViableBaseActionError
        If no candidate succeeds anywhere.
    """
    kind = TaskKind.parse(task_kind)
    cable = cable or cs.load_cable()
    rng = np.random.default_rng(rng_seed)
    if candidates is None:
        candidates = [ApexAction(rng.uniform(ACTION_LOW, ACTION_HIGH)) for _ in range(n_candidates)]
    settings = [randomize_instance(kind, None, _instance_seed(rng_seed, 0xBA5E, i)) for i in range(n_settings)]
    scores, durations = [], []
    for cand in candidates:
        wins, dur = 0, np.inf
        for inst in settings:
            rec = run_trial(kind, inst, cand, cable)
            wins += rec.success
            if np.isfinite(rec.duration):
                dur = rec.duration
        scores.append(wins)
        durations.append(dur)
    if max(scores) == 0:
        raise NoViableBaseActionError(f"none of {len(candidates)} candidates succeeded on {n_settings} settings")
    best = min(range(len(candidates)), key=lambda i: (-scores[i], durations[i], i))
    return BaseAction(kind, candidates[best], scores[best], float(durations[best]), best, tuple(scores))


# ----------------------------------------------------------------- collection

def collect(
    task_kind,
    base: BaseAction,
    config: CollectionConfig = CollectionConfig(),
    rng_seed: int = 0,
    cable: Optional[cs.CableModel] = None,
    progress: Optional[Callable[[int, int], None]] = None,
) -> Dataset:
    """Self-supervised collection of N successful (observation, action) pairs.

    For each random instance the base action is tried first; after a failure
    the action is perturbed by uniform noise of half-width
    ``config.noise_scale`` (accumulating, or redrawn around the base action
    when ``random_walk`` is off) and retried, each attempt after a fresh
    reset. After ``max_attempts_per_instance`` failures the instance is
    replaced.

    Raises
    ------
    PartialDatasetError
        If ``instance_budget_factor * N`` instances do not yield N records;
        the error carries what was collected.
    """
    kind = TaskKind.parse(task_kind)
    cable = cable or cs.load_cable()
    rng = np.random.default_rng(rng_seed)
    base_a = base.action.as_array()
    obs, acts, extras = [], [], []
    budget = config.instance_budget_factor * config.N
    used = attempts_total = 0
    meta = {
        "task": kind.value,
        "cable_preset": cable.name if hasattr(cable, "name") else None,
        "seed": int(rng_seed),
        "base_action": list(base.action.apex_joints),
        "config": {k: getattr(config, k) for k in config.__dataclass_fields__},
    }
    while len(acts) < config.N:
        if used >= budget:
            meta.update(instances=used, attempts=attempts_total, complete=False)
            X = np.array(obs).reshape(len(obs), observation_size(kind))
            data = Dataset(X, np.array(acts).reshape(-1, 3), meta, extras)
            raise PartialDatasetError(f"collected {len(acts)} of {config.N} records from {used} instances", data)
        inst = randomize_instance(kind, None, int(rng.integers(2**31)), cable_preset=meta["cable_preset"])
        used += 1
        o = observe(inst.scene, cable, kind).as_array()
        a = base_a.copy()
        for attempt in range(config.max_attempts_per_instance):
            attempts_total += 1
            action = ApexAction(a)
            rec = run_trial(kind, inst, action, cable, config.settle_time)
            if rec.success:
                obs.append(o)
                acts.append(action.as_array())
                extras.append({"instance": inst.to_dict(), "attempt": attempt, "duration": rec.duration})
                break
            noise = rng.uniform(-config.noise_scale, config.noise_scale, 3)
            a = _clip_box((a if config.random_walk else base_a) + noise)
        if progress is not None:
            progress(len(acts), used)
    meta.update(instances=used, attempts=attempts_total, complete=True)
    return Dataset(np.array(obs), np.array(acts), meta, extras)


def replay(kind, dataset: Dataset, cable: Optional[cs.CableModel] = None) -> List[bool]:
    """Re-execute every stored record on its stored instance."""
    out = []
    for a, e in zip(dataset.actions, dataset.extras):
        inst = TaskInstance.from_dict(e["instance"])
        out.append(run_trial(kind, inst, ApexAction(a), cable).success)
    return out


# ------------------------------------------------------------------ baselines

def varying_target_point(task_kind, instance: TaskInstance) -> np.ndarray:
    """World point the varying-apex baseline puts the end effector at.

    Vaulting and weaving: 15 cm above the obstacle's centre of mass (the
    middle obstacle for weaving). Knocking: 10 cm above the target's.
    """
    kind = TaskKind.parse(task_kind)
    scene = instance.scene
    if kind is TaskKind.KNOCKING:
        com = np.array(scene.target.position)
    else:
        com = scene.obstacles[len(scene.obstacles) // 2].com + np.array([0.0, 0.0, scene.ground_height])
    return com + np.array([0.0, 0.0, APEX_OFFSET[kind]])


def _shoulder(arm: ArmModel) -> np.ndarray:
    return np.array([0.0, 0.0, arm.dh_rows[0, 1]])


def baseline_varying_apex(task_kind, instance: TaskInstance, arm: Optional[ArmModel] = None,
                          clamp_reach: bool = True) -> ApexAction:
    """Apex whose end effector sits at :func:`varying_target_point`.

    With ``clamp_reach`` a point beyond the workspace is moved along the line
    to the shoulder until it is reachable (at ``REACH_FRACTION`` of the
    maximum reach); otherwise the IK error propagates.
    """
    arm = arm or load_arm()
    p = varying_target_point(task_kind, instance) - np.asarray(instance.scene.arm_base)
    try:
        return ApexAction(apex_ik(arm, p, WRIST))
    except (OutOfReachError, JointLimitError):
        if not clamp_reach:
            raise
    s = _shoulder(arm)
    lo, hi = 0.0, 1.0
    for _ in range(60):
        t = 0.5 * (lo + hi)
        try:
            apex_ik(arm, s + t * (p - s), WRIST)
            lo = t
        except (OutOfReachError, JointLimitError):
            hi = t
    return ApexAction(apex_ik(arm, s + REACH_FRACTION * lo * (p - s), WRIST))


def canonical_instance(task_kind) -> TaskInstance:
    """Mid-range layout used once to pick the fixed apex.

    One obstacle (0.45 x 0.2 x 0.9 m) at the middle of the tier-2 band,
    centred in the lateral range; knocking adds a cylinder at the centre of
    its top; weaving uses three such obstacles 0.3 m apart.
    """
    kind = TaskKind.parse(task_kind)
    w, d, h, x = 0.45, 0.2, 0.9, 2.25
    y = left_limit(x) - 0.5 * w - 0.5 * LATERAL_RANGE[kind.value]
    if kind is TaskKind.WEAVING:
        obstacles = tuple(Obstacle((x + k * (d + 0.3), y), w, d, h) for k in (-1, 0, 1))
        return TaskInstance(kind, SceneConfig(obstacles=obstacles), Tier.TWO, 0)
    ped = Obstacle((x, y), w, d, h)
    target = TargetObject.on_pedestal("cylinder", ped, (0.07, 0.07, 0.12), 0.2) if kind is TaskKind.KNOCKING else None
    return TaskInstance(kind, SceneConfig(obstacles=(ped,), target=target), Tier.TWO, 0)


# the varying-apex rule applied once to canonical_instance(kind), rounded;
# fixed_check_<task>.json in the package data is a tier-1 instance it solves
FIXED_APEX: Dict[TaskKind, tuple] = {
    TaskKind.VAULTING: (-0.3507, -0.1503, 0.2649),
    TaskKind.KNOCKING: (-0.3507, -0.3353, 0.2372),
    TaskKind.WEAVING: (-0.2431, -0.1493, 0.2659),
}


def fixed_check_instance(task_kind) -> TaskInstance:
    """Shipped tier-1 instance on which the fixed apex succeeds (vaulting, knocking)."""
    kind = TaskKind.parse(task_kind)
    text = resources.files("cablewhip").joinpath(f"data/fixed_check_{kind.value}.json").read_text()
    return TaskInstance.from_dict(json.loads(text))


def baseline_fixed_apex(task_kind) -> ApexAction:
    """The same apex for every instance of a task."""
    kind = TaskKind.parse(task_kind)
    if kind in FIXED_APEX:
        return ApexAction(FIXED_APEX[kind])
    return baseline_varying_apex(kind, canonical_instance(kind))


# ----------------------------------------------------------------- evaluation

class Actor:
    name = "actor"

    def act(self, kind: TaskKind, instance: TaskInstance, cable: cs.CableModel) -> Optional[ApexAction]:
        raise NotImplementedError


class FixedApexActor(Actor):
    name = "fixed"

    def act(self, kind, instance, cable):
        return baseline_fixed_apex(kind)


class VaryingApexActor(Actor):
    name = "varying"

    def act(self, kind, instance, cable):
        return baseline_varying_apex(kind, instance)


class PolicyActor(Actor):
    name = "learned"

    def __init__(self, policy: MlpPolicy):
        self.policy = policy

    def act(self, kind, instance, cable):
        return predict(self.policy, observe(instance.scene, cable, kind))


class ConstantActor(Actor):
    """Always the given action (for tests and ablations)."""

    def __init__(self, action: ApexAction, name: str = "constant"):
        self.action = action
        self.name = name

    def act(self, kind, instance, cable):
        return self.action


@dataclass
class EvalResult:
    task: TaskKind
    actor: str
    counts: Dict[str, int]
    trials: Dict[str, int]
    records: List[TrialRecord] = field(default_factory=list)

    def rates(self) -> Dict[str, float]:
        return {k: self.counts[k] / self.trials[k] if self.trials[k] else 0.0 for k in self.counts}

    def to_dict(self) -> dict:
        return {
            "task": self.task.value,
            "actor": self.actor,
            "counts": self.counts,
            "trials": self.trials,
            "rates": self.rates(),
            "records": [r.to_dict() for r in self.records],
        }


def evaluation_instances(task_kind, tier, n_trials: int, rng_seed: int, cable_preset: Optional[str] = None):
    """The instances every actor sees for (task, tier, seed)."""
    kind = TaskKind.parse(task_kind)
    key = 0 if tier is None else int(tier)
    return [randomize_instance(kind, tier, _instance_seed(rng_seed, 0xE7A1, key, i), cable_preset)
            for i in range(n_trials)]


def evaluate(
    actor: Actor,
    task_kind,
    tiers: Optional[Sequence[Optional[int]]] = None,
    n_trials: int = 20,
    rng_seed: int = 0,
    cable: Optional[cs.CableModel] = None,
) -> EvalResult:
    """One attempt per fresh instance, ``n_trials`` per tier.

    ``tiers`` defaults to (1, 2, 3) for vaulting and knocking and to a single
    untiered group (``None``) for weaving. Instances depend only on the task,
    tier, trial index and seed, so different actors face the same scenes.
    """
    kind = TaskKind.parse(task_kind)
    cable = cable or cs.load_cable()
    if tiers is None:
        tiers = (None,) if kind is TaskKind.WEAVING else (1, 2, 3)
    preset = getattr(cable, "name", None)
    counts, trials, records = {}, {}, []
    for tier in tiers:
        key = "all" if tier is None else str(int(tier))
        counts[key] = trials[key] = 0
        for inst in evaluation_instances(kind, tier, n_trials, rng_seed, preset):
            state = cs.taut_pull_reset(cable, inst.scene)
            try:
                action = actor.act(kind, inst, cable)
            except (OutOfReachError, JointLimitError, ValueError) as exc:
                rec = TrialRecord(inst, None, False, error=f"actor: {exc}")
            else:
                rec = run_trial(kind, inst, action, cable, reset=False, state=state)
            records.append(rec)
            counts[key] += rec.success
            trials[key] += 1
    return EvalResult(kind, actor.name, counts, trials, records)
