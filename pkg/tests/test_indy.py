from __future__ import annotations

import numpy as np
import pytest

from cablewhip import cablesim as cs
from cablewhip import indy
from cablewhip.arm import OutOfReachError, apex_ik, forward_kinematics, load_arm
from cablewhip.cablesim import Obstacle, SceneConfig, TargetObject
from cablewhip.minjerk import WRIST, ApexAction, expand_apex, get_profile
from cablewhip.tasks import TaskInstance, TaskKind, Tier, randomize_instance

ARM = load_arm()
# the best vaulting candidate found by find_base_action under seed 0
VAULT_BASE = ApexAction((-0.11453779221416616, -2.0426765198833405, 0.16335548211441941))


class FakeTrials:
    """Stands in for run_trial: success decided by a rule over (instance, action)."""

    def __init__(self, rule):
        self.rule = rule
        self.calls = []

    def __call__(self, kind, inst, action, cable=None, settle_time=cs.SETTLE_CAP, reset=True, state=None):
        self.calls.append((inst, action))
        return indy.TrialRecord(inst, action, bool(self.rule(inst, action)), duration=1.0)


def test_find_base_argmax_on_degenerate_pool(monkeypatch):
    good = ApexAction((0.1, -1.0, 0.5))
    pool = [ApexAction((0.0, -1.0, 0.5)), good, ApexAction((0.2, -1.0, 0.5))]
    monkeypatch.setattr(indy, "run_trial", FakeTrials(lambda inst, a: a == good))
    base = indy.find_base_action("vaulting", 0, n_settings=10, candidates=pool)
    assert base.action == good and base.score == 10 and base.scores == (0, 10, 0) and base.index == 1


def test_find_base_ties_go_to_lower_index(monkeypatch):
    pool = [ApexAction((0.0, -1.0, 0.5)), ApexAction((0.1, -1.0, 0.5))]
    monkeypatch.setattr(indy, "run_trial", FakeTrials(lambda inst, a: True))
    assert indy.find_base_action("vaulting", 0, n_settings=3, candidates=pool).index == 0


def test_find_base_deterministic_and_no_viable(monkeypatch):
    monkeypatch.setattr(indy, "run_trial", FakeTrials(lambda inst, a: a.apex_joints[0] > 0.3))
    a = indy.find_base_action("vaulting", 5, n_candidates=20, n_settings=2)
    b = indy.find_base_action("vaulting", 5, n_candidates=20, n_settings=2)
    assert a == b
    monkeypatch.setattr(indy, "run_trial", FakeTrials(lambda inst, a: False))
    with pytest.raises(indy.NoViableBaseActionError):
        indy.find_base_action("vaulting", 5, n_candidates=5, n_settings=2)


def test_find_base_candidates_within_box(monkeypatch):
    fake = FakeTrials(lambda inst, a: True)
    monkeypatch.setattr(indy, "run_trial", fake)
    indy.find_base_action("knocking", 1, n_candidates=60, n_settings=1)
    acts = np.array([a.apex_joints for _, a in fake.calls])
    assert len(acts) == 60
    assert np.all(acts >= indy.ACTION_LOW) and np.all(acts <= indy.ACTION_HIGH)
    assert all(ApexAction(a).within(ARM) for a in acts)


@pytest.mark.slow
def test_find_base_score_matches_reevaluation():
    pool = [VAULT_BASE, ApexAction((0.0, -1.6, 0.4)), ApexAction((-0.3, -2.2, 0.3))]
    base = indy.find_base_action("vaulting", 0, n_settings=10, candidates=pool)
    # independent scripted loop over the same ten settings
    settings = [randomize_instance("vaulting", None, indy._instance_seed(0, 0xBA5E, i)) for i in range(10)]
    cable = cs.load_cable()
    scores = []
    for cand in pool:
        wins = 0
        for inst in settings:
            state = cs.taut_pull_reset(cable, inst.scene)
            res = cs.rollout(cable, inst.scene, state, indy.trajectory_function("vaulting", cand))
            try:
                wins += indy.check_goal("vaulting", res, inst.scene, cable.link_radius)
            except indy.NotSettledError:
                pass
        scores.append(wins)
    assert list(base.scores) == scores
    assert base.score == max(scores) > 0


def test_collect_all_base_success(monkeypatch):
    monkeypatch.setattr(indy, "run_trial", FakeTrials(lambda inst, a: True))
    base = indy.BaseAction(TaskKind.VAULTING, ApexAction((0.1, -1.2, 0.6)))
    data = indy.collect("vaulting", base, indy.CollectionConfig(N=7), rng_seed=3)
    assert len(data) == 7
    assert np.all(data.actions == base.action.as_array())
    assert data.metadata["instances"] == 7 and data.metadata["attempts"] == 7
    assert all(e["attempt"] == 0 for e in data.extras)


def test_collect_zero_noise_abandons_instance(monkeypatch):
    first = []

    def rule(inst, a):
        if not first:
            first.append(inst)
        return inst != first[0]

    fake = FakeTrials(rule)
    monkeypatch.setattr(indy, "run_trial", fake)
    base = indy.BaseAction(TaskKind.VAULTING, ApexAction((0.1, -1.2, 0.6)))
    cfg = indy.CollectionConfig(N=1, noise_scale=0.0, max_attempts_per_instance=6)
    data = indy.collect("vaulting", base, cfg, rng_seed=0)
    tried = [a for inst, a in fake.calls if inst == first[0]]
    assert len(tried) == 6 and all(a == base.action for a in tried)
    assert data.metadata["instances"] == 2 and data.metadata["attempts"] == 7


def test_collect_partial_dataset(monkeypatch):
    monkeypatch.setattr(indy, "run_trial", FakeTrials(lambda inst, a: False))
    base = indy.BaseAction(TaskKind.VAULTING, ApexAction((0.1, -1.2, 0.6)))
    cfg = indy.CollectionConfig(N=2, max_attempts_per_instance=2, instance_budget_factor=3)
    with pytest.raises(indy.PartialDatasetError) as err:
        indy.collect("vaulting", base, cfg)
    assert len(err.value.dataset) == 0 and err.value.dataset.metadata["instances"] == 6


def test_collect_noise_stays_in_box(monkeypatch):
    fake = FakeTrials(lambda inst, a: False)
    monkeypatch.setattr(indy, "run_trial", fake)
    base = indy.BaseAction(TaskKind.VAULTING, ApexAction((0.59, -0.61, 1.79)))
    cfg = indy.CollectionConfig(N=1, noise_scale=0.3, max_attempts_per_instance=20, instance_budget_factor=2)
    with pytest.raises(indy.PartialDatasetError):
        indy.collect("vaulting", base, cfg)
    acts = np.array([a.apex_joints for _, a in fake.calls])
    assert np.all(acts >= indy.ACTION_LOW) and np.all(acts <= indy.ACTION_HIGH)
    assert len({tuple(a) for a in acts}) > 20


@pytest.mark.slow
def test_collected_records_replay_and_resets_are_counted():
    base = indy.BaseAction(TaskKind.VAULTING, VAULT_BASE)
    n0 = cs.reset_count()
    data = indy.collect("vaulting", base, indy.CollectionConfig(N=2), rng_seed=11)
    assert cs.reset_count() - n0 == data.metadata["attempts"]
    assert indy.replay("vaulting", data) == [True, True]


def vault_instance(center, height, width=0.4, depth=0.2):
    return TaskInstance("vaulting", SceneConfig(obstacles=(Obstacle(center, width, depth, height),)), Tier.ONE, 0)


def test_varying_point_vaulting_example():
    inst = vault_instance((1.0, 0.0), 0.9)
    assert np.allclose(indy.varying_target_point("vaulting", inst), [1.0, 0.0, 0.60], atol=1e-12)


def test_varying_point_knocking_example():
    ped = Obstacle((2.0, -0.5), 0.3, 0.2, 0.84)
    target = TargetObject.on_pedestal("cylinder", ped, (0.07, 0.07, 0.12), 0.2)
    inst = TaskInstance("knocking", SceneConfig(obstacles=(ped,), target=target), Tier.TWO, 0)
    assert target.position[2] == pytest.approx(0.9)
    assert indy.varying_target_point("knocking", inst)[2] == pytest.approx(1.0, abs=1e-12)


def test_varying_apex_fk_round_trip():
    inst = vault_instance((0.6, -0.3), 0.9)
    a = indy.baseline_varying_apex("vaulting", inst, clamp_reach=False)
    q = expand_apex(a, get_profile("vaulting"), ARM)
    p = forward_kinematics(ARM, q).position + np.asarray(inst.scene.arm_base)
    assert np.linalg.norm(p - indy.varying_target_point("vaulting", inst)) < 1e-6


def test_varying_apex_out_of_reach():
    far = vault_instance((3.0, -0.5), 0.9)
    with pytest.raises(OutOfReachError):
        indy.baseline_varying_apex("vaulting", far, clamp_reach=False)
    a = indy.baseline_varying_apex("vaulting", far)
    assert a.within(ARM)
    # clamped towards the obstacle: the end effector points at its azimuth
    p = forward_kinematics(ARM, np.r_[a.as_array(), WRIST]).position
    target = indy.varying_target_point("vaulting", far) - np.asarray(far.scene.arm_base)
    assert np.dot(p[:2], target[:2]) > 0


def test_fixed_apex_constant_and_within_limits():
    for kind in TaskKind:
        insts = [randomize_instance(kind, None, s) for s in range(3)]
        acts = {indy.FixedApexActor().act(kind, i, None) for i in insts}
        assert len(acts) == 1
        assert acts.pop().within(ARM)


@pytest.mark.slow
@pytest.mark.parametrize("kind", ["vaulting", "knocking"])
def test_fixed_apex_solves_shipped_tier_one_instance(kind):
    inst = indy.fixed_check_instance(kind)
    assert inst.tier is Tier.ONE
    assert indy.run_trial(kind, inst, indy.baseline_fixed_apex(kind)).success


class FarActor(indy.Actor):
    name = "far"

    def act(self, kind, instance, cable):
        return ApexAction(apex_ik(ARM, (5.0, 0.0, 0.0), WRIST))


def test_evaluate_out_of_reach_actor():
    n0 = cs.reset_count()
    res = indy.evaluate(FarActor(), "vaulting", (1, 2), n_trials=3, rng_seed=0)
    assert res.counts == {"1": 0, "2": 0} and res.trials == {"1": 3, "2": 3}
    assert all(r.error and r.error.startswith("actor") for r in res.records)
    assert cs.reset_count() - n0 == 6


def test_evaluation_instances_shared_across_actors():
    a = indy.evaluation_instances("vaulting", 3, 5, 42)
    b = indy.evaluation_instances("vaulting", 3, 5, 42)
    assert a == b and all(i.tier is Tier.THREE for i in a)
    assert indy.evaluation_instances("vaulting", 3, 5, 43) != a


@pytest.mark.slow
def test_evaluate_deterministic_and_recount():
    actor = indy.ConstantActor(VAULT_BASE)
    r1 = indy.evaluate(actor, "vaulting", (1, 2), n_trials=3, rng_seed=7)
    r2 = indy.evaluate(actor, "vaulting", (1, 2), n_trials=3, rng_seed=7)
    assert r1.to_dict() == r2.to_dict()
    recount = {"1": 0, "2": 0}
    for rec in r1.records:
        recount[str(int(rec.instance.tier))] += rec.success
    assert recount == r1.counts
