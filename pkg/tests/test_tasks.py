from __future__ import annotations

import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cablewhip.cablesim import Obstacle, SceneConfig, TargetObject, load_cable
from cablewhip.tasks import (
    DEPTH_RANGE,
    GAP_RANGE,
    HEIGHT_RANGE,
    LATERAL_RANGE,
    TARGETS,
    WIDTH_RANGE,
    NotSettledError,
    TaskInstance,
    TaskKind,
    Tier,
    check_goal,
    left_limit,
    observation_size,
    observe,
    randomize_instance,
    tier_of,
)

CABLE = load_cable()
ANCHOR = np.asarray(SceneConfig().wall_anchor)


def test_tier_examples():
    assert tier_of(1.5) is Tier.ONE
    assert tier_of(2.0) is Tier.TWO
    assert tier_of(3.2) is Tier.THREE
    assert tier_of(3.0) is Tier.TWO
    assert tier_of(0.2) is Tier.ONE
    with pytest.raises(ValueError):
        tier_of(0.0)
    with pytest.raises(ValueError):
        tier_of(-1.0)


@given(st.floats(1e-6, 100.0))
def test_tiers_partition(d):
    t = tier_of(d)
    lo, hi = t.band
    assert lo < d <= hi or (t is Tier.THREE and d > lo)


def test_randomize_tier_one_seed_zero():
    inst = randomize_instance("vaulting", 1, 0)
    assert inst.scene.obstacles[0].center[0] <= 1.5
    assert inst.tier is Tier.ONE


def test_randomize_deterministic():
    for kind in TaskKind:
        assert randomize_instance(kind, None, 17) == randomize_instance(kind, None, 17)
    assert randomize_instance("vaulting", 2, 1) != randomize_instance("vaulting", 2, 2)


def check_ranges(inst: TaskInstance):
    obs = inst.scene.obstacles
    for o in obs:
        assert WIDTH_RANGE[0] <= o.width <= WIDTH_RANGE[1]
        assert HEIGHT_RANGE[0] <= o.height <= HEIGHT_RANGE[1]
        assert DEPTH_RANGE[0] <= o.depth <= DEPTH_RANGE[1]
        # right of the reset cable and within the lateral range
        for x in (o.center[0] - o.depth / 2, o.center[0] + o.depth / 2):
            assert o.center[1] + o.width / 2 <= left_limit(x) + 1e-12
    mid = obs[len(obs) // 2]
    assert tier_of(mid.center[0]) is inst.tier
    top = min(left_limit(x) for o in obs for x in (o.center[0] - o.depth / 2, o.center[0] + o.depth / 2))
    assert top - (mid.center[1] + mid.width / 2) <= LATERAL_RANGE[inst.kind.value] + 1e-12
    if inst.kind is TaskKind.WEAVING:
        assert len(obs) == 3
        assert len({(o.width, o.depth, o.height, o.center[1]) for o in obs}) == 1
        for a, b in zip(obs, obs[1:]):
            gap = (b.center[0] - b.depth / 2) - (a.center[0] + a.depth / 2)
            assert GAP_RANGE[0] - 1e-12 <= gap <= GAP_RANGE[1] + 1e-12
    if inst.kind is TaskKind.KNOCKING:
        t = inst.scene.target
        p = obs[0]
        assert t.shape in TARGETS
        assert t.position[2] == pytest.approx(p.height + t.half_height)
        x0, x1, y0, y1, _, _ = p.bounds()
        assert x0 <= t.position[0] <= x1 and y0 <= t.position[1] <= y1


@pytest.mark.slow
def test_randomize_ranges_many_seeds():
    for kind in TaskKind:
        widths = []
        for seed in range(10_000 if kind is TaskKind.VAULTING else 2_000):
            inst = randomize_instance(kind, None, seed)
            check_ranges(inst)
            widths.append(inst.scene.obstacles[0].width)
        assert WIDTH_RANGE[0] <= min(widths) and max(widths) <= WIDTH_RANGE[1]


def test_instance_json_round_trip(tmp_path):
    for kind in TaskKind:
        inst = randomize_instance(kind, 2, 5)
        assert TaskInstance.load(inst.save(tmp_path / f"{kind.value}.json")) == inst


def test_instance_layout_validation():
    scene = SceneConfig(obstacles=(Obstacle((2.0, -0.5), 0.3, 0.2, 0.6),))
    TaskInstance("vaulting", scene, 2, 0)
    with pytest.raises(ValueError):
        TaskInstance("weaving", scene, 2, 0)
    with pytest.raises(ValueError):
        TaskInstance("knocking", scene, 2, 0)


def test_observe_identity_extraction():
    scene = SceneConfig(obstacles=(Obstacle((2.0, 0.3), 0.4, 0.2, 0.9),))
    o = observe(scene, CABLE, "vaulting")
    assert np.array_equal(o.values[:5], [2.0, 0.3, 0.4, 0.2, 0.9])
    assert np.all(o.values[5:12] == 0.0)
    assert np.array_equal(o.values[12:], [CABLE.total_length, CABLE.total_mass])
    assert np.array_equal(o.mask, [1.0, 0.0])
    assert o.as_array().size == observation_size("vaulting")
    assert o.as_array().size == o.values.size + o.mask.size


def test_observe_locality():
    a = SceneConfig(obstacles=(Obstacle((2.0, 0.3), 0.4, 0.2, 0.9),))
    b = SceneConfig(obstacles=(Obstacle((2.0, 0.3), 0.4, 0.2, 1.1),))
    diff = np.flatnonzero(observe(a, CABLE, "vaulting").values != observe(b, CABLE, "vaulting").values)
    assert diff.tolist() == [4]


def test_observe_sizes_and_padding():
    for kind in TaskKind:
        inst = randomize_instance(kind, 1, 3)
        o = observe(inst.scene, CABLE, kind)
        assert o.as_array().size == observation_size(kind)
    knock = randomize_instance("knocking", 1, 3)
    t = knock.scene.target
    o = observe(knock.scene, CABLE, "knocking")
    assert np.allclose(o.values[5:12], [*t.position, t.yaw, *t.dims])
    assert o.mask[-1] == 1.0
    with pytest.raises(ValueError):
        observe(randomize_instance("weaving", 1, 3).scene, CABLE, "vaulting")


def test_observe_injective_on_random_family():
    rows = set()
    n = 0
    for kind in TaskKind:
        for seed in range(300):
            rows.add(observe(randomize_instance(kind, None, seed).scene, CABLE, kind).as_array().tobytes())
            n += 1
    assert len(rows) == n


# goal predicates on hand-built cable shapes

def polyline(*pts, n=200):
    pts = np.asarray(pts, dtype=float)
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    s = np.r_[0, np.cumsum(seg)]
    t = np.linspace(0, s[-1], n)
    return np.stack([np.interp(t, s, pts[:, k]) for k in range(3)], axis=1)


OBST = Obstacle((2.0, -0.5), 0.4, 0.2, 0.6)
VAULT_SCENE = SceneConfig(obstacles=(OBST,))
GRIP = np.array([0.2, -0.5, 0.5])


def test_vaulting_true_when_cable_right_of_obstacle():
    cable = polyline(ANCHOR, (2.0, -0.9, 0.0), GRIP)
    assert check_goal("vaulting", [cable, cable], VAULT_SCENE)


def test_vaulting_false_when_cable_left_or_on_top():
    left = polyline(ANCHOR, (2.0, 0.2, 0.0), GRIP)
    assert not check_goal("vaulting", [left], VAULT_SCENE)
    on_top = polyline(ANCHOR, (2.1, -0.9, 0.0), (2.0, -0.6, 0.6 + 0.004), (1.9, -0.9, 0.0), GRIP)
    assert not check_goal("vaulting", [on_top], VAULT_SCENE)


def test_unsettled_history_rejected():
    a = polyline(ANCHOR, (2.0, -0.9, 0.0), GRIP)
    b = a.copy()
    b[50, 2] += 0.01
    with pytest.raises(NotSettledError):
        check_goal("vaulting", [a, b], VAULT_SCENE)
    with pytest.raises(NotSettledError):
        check_goal("vaulting", [], VAULT_SCENE)


def test_knocking_target_on_pedestal_is_false():
    ped = Obstacle((2.0, -0.5), 0.3, 0.2, 0.8)
    t = TargetObject.on_pedestal("cup", ped, *TARGETS["cup"])
    scene = SceneConfig(obstacles=(ped,), target=t)
    cable = polyline(ANCHOR, (2.0, 0.2, 0.0), GRIP)
    assert not check_goal("knocking", [cable], scene)
    fallen = dataclasses.replace(t, position=(2.0, -0.8, t.half_height))
    assert check_goal("knocking", [cable], dataclasses.replace(scene, target=fallen))


def weave_scene(y=-0.5):
    obs = tuple(Obstacle((x, y), 0.3, 0.15, 0.5) for x in (1.6, 2.0, 2.4))
    return SceneConfig(obstacles=obs)


def test_weaving_alternation():
    scene = weave_scene()
    straight = polyline(ANCHOR, (1.0, -1.2, 0.0), GRIP)
    assert not check_goal("weaving", [straight], scene)
    weave = polyline(ANCHOR, (2.6, -0.5, 0.0), (2.4, -0.9, 0.0), (2.0, -0.1, 0.0), (1.6, -0.9, 0.0),
                     (1.3, -0.6, 0.0), GRIP, n=400)
    assert check_goal("weaving", [weave], scene)
    mirrored = polyline(ANCHOR, (2.6, -0.5, 0.0), (2.4, -0.1, 0.0), (2.0, -0.9, 0.0), (1.6, -0.1, 0.0),
                        (1.3, -0.4, 0.0), GRIP, n=400)
    assert check_goal("weaving", [mirrored], scene)


def shifted(scene: SceneConfig, dy: float) -> SceneConfig:
    obs = tuple(Obstacle((o.center[0], o.center[1] + dy), o.width, o.depth, o.height) for o in scene.obstacles)
    target = scene.target
    if target is not None:
        p = target.position
        target = dataclasses.replace(target, position=(p[0], p[1] + dy, p[2]))
    w = scene.wall_anchor
    return dataclasses.replace(scene, obstacles=obs, target=target, wall_anchor=(w[0], w[1] + dy, w[2]))


@settings(max_examples=40, deadline=None)
@given(st.floats(-2.0, 2.0), st.sampled_from(["straight", "right", "left", "weave"]))
def test_goal_invariant_to_lateral_translation(dy, shape):
    paths = {
        "straight": polyline(ANCHOR, (1.0, -1.2, 0.0), GRIP),
        "right": polyline(ANCHOR, (2.0, -0.9, 0.0), GRIP),
        "left": polyline(ANCHOR, (2.0, 0.2, 0.0), GRIP),
        "weave": polyline(ANCHOR, (2.6, -0.5, 0.0), (2.4, -0.9, 0.0), (2.0, -0.1, 0.0), (1.6, -0.9, 0.0),
                          (1.3, -0.6, 0.0), GRIP, n=400),
    }
    cable = paths[shape]
    moved = cable + np.array([0.0, dy, 0.0])
    for kind, scene in (("vaulting", VAULT_SCENE), ("weaving", weave_scene())):
        assert check_goal(kind, [cable], scene) == check_goal(kind, [moved], shifted(scene, dy))
