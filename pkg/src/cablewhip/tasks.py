"""Task instances, observations, goal predicates and difficulty tiers.

World frame: the arm base is at the origin of the floor plan, the wall anchor
lies on the +x axis and +y points to the robot's left. A task sweeps the
cable from left (+y) to right (-y), so "beyond an obstacle" means past its
right face ``y_c - width / 2``. An obstacle's tier is set by its along-axis
distance ``x`` from the arm base.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .cablesim import CableModel, Obstacle, SceneConfig, TargetObject

TIER_BOUNDS = (1.5, 3.0)
WIDTH_RANGE = (0.15, 0.75)
HEIGHT_RANGE = (0.3, 1.5)
DEPTH_RANGE = (0.10, 0.30)
GAP_RANGE = (0.15, 0.50)
LATERAL_RANGE = {"vaulting": 1.5, "knocking": 1.5, "weaving": 1.0}
# usable floor strip between the arm's swept disc and the wall
X_NEAR = 0.95
X_FAR = 4.2
# Obstacles stay CLEARANCE to the right of the reset cable. For every shipped
# preset the reset cable lies left of y = min(CABLE_CAP, CABLE_SLOPE (x_wall - x)).
CABLE_SLOPE = 0.28
CABLE_CAP = 0.6
CLEARANCE = 0.15
X_WALL = float(np.sqrt(20.0))
# the four target objects: dims (m) and mass (kg)
TARGETS = {
    "cylinder": ((0.07, 0.07, 0.12), 0.20),
    "ball": ((0.067, 0.067, 0.067), 0.058),
    "cup": ((0.08, 0.08, 0.10), 0.15),
    "box": ((0.10, 0.06, 0.15), 0.20),
}
ON_TOP_MARGIN = 2.0  # link radii
SETTLED_MOTION = 1e-3  # m between the last two frames of a plain history


class TaskKind(str, enum.Enum):
    VAULTING = "vaulting"
    KNOCKING = "knocking"
    WEAVING = "weaving"

    @classmethod
    def parse(cls, value) -> "TaskKind":
        return value if isinstance(value, cls) else cls(str(value).lower())


class Tier(enum.IntEnum):
    ONE = 1
    TWO = 2
    THREE = 3

    @property
    def band(self):
        lo = (0.0,) + TIER_BOUNDS
        hi = TIER_BOUNDS + (np.inf,)
        return lo[self - 1], hi[self - 1]


def tier_of(distance: float) -> Tier:
    """Tier of an obstacle ``distance`` m from the arm base; bands are closed on the lower tier."""
    if not distance > 0:
        raise ValueError(f"distance must be positive, got {distance}")
    return Tier(1 + int(np.searchsorted(TIER_BOUNDS, distance, side="left")))


N_OBSTACLES = {TaskKind.VAULTING: 1, TaskKind.KNOCKING: 1, TaskKind.WEAVING: 3}


@dataclass(frozen=True)
class TaskInstance:
    kind: TaskKind
    scene: SceneConfig
    tier: Tier
    seed: int

    def __post_init__(self):
        object.__setattr__(self, "kind", TaskKind.parse(self.kind))
        object.__setattr__(self, "tier", Tier(int(self.tier)))
        if len(self.scene.obstacles) != N_OBSTACLES[self.kind]:
            raise ValueError(f"{self.kind.value} needs {N_OBSTACLES[self.kind]} obstacle(s)")
        if (self.kind is TaskKind.KNOCKING) != (self.scene.target is not None):
            raise ValueError("exactly the knocking task has a target")

    def to_dict(self) -> dict:
        return {**self.scene.to_dict(), "kind": self.kind.value, "tier": int(self.tier), "seed": self.seed}

    @classmethod
    def from_dict(cls, d: dict) -> "TaskInstance":
        return cls(TaskKind.parse(d["kind"]), SceneConfig.from_dict(d), Tier(int(d["tier"])), int(d["seed"]))

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=2))
        return path

    @classmethod
    def load(cls, path) -> "TaskInstance":
        return cls.from_dict(json.loads(Path(path).read_text()))


# ------------------------------------------------------------ randomisation

def left_limit(x: float) -> float:
    """Largest admissible y of an obstacle's left face at along-axis station ``x``."""
    return min(CABLE_CAP, CABLE_SLOPE * (X_WALL - x)) - CLEARANCE


def _x_band(tier: Tier, depth: float):
    lo, hi = tier.band
    lo = max(lo, X_NEAR + 0.5 * depth)
    hi = min(hi, X_FAR - 0.5 * depth)
    return lo, hi


def _uniform_in_tier(rng, tier: Tier, lo: float, hi: float) -> float:
    # the lower band edge belongs to the tier below
    x = rng.uniform(lo, hi)
    while tier_of(x) != tier:
        x = rng.uniform(lo, hi)
    return float(x)


def _lateral(rng, kind: TaskKind, x_stations: Sequence[float], width: float) -> float:
    top = min(left_limit(x) for x in x_stations) - 0.5 * width
    return float(top - rng.uniform(0.0, LATERAL_RANGE[kind.value]))


def randomize_instance(kind, tier=None, rng_seed: int = 0, cable_preset: Optional[str] = None) -> TaskInstance:
    """Random instance of ``kind``; ``tier=None`` draws the tier uniformly.

    Obstacle width, height and depth are uniform in their ranges; the
    along-axis position is uniform in the tier band and the lateral position
    uniform in the task's range, to the right of the reset cable. Weaving
    places three identical obstacles in a row along x with uniform gaps; its
    tier is that of the middle obstacle.
    """
    kind = TaskKind.parse(kind)
    rng = np.random.default_rng(rng_seed)
    tier = Tier(int(rng.integers(1, 4))) if tier is None else Tier(int(tier))
    extra = {} if cable_preset is None else {"cable_preset": cable_preset}
    while True:
        w = float(rng.uniform(*WIDTH_RANGE))
        h = float(rng.uniform(*HEIGHT_RANGE))
        d = float(rng.uniform(*DEPTH_RANGE))
        if kind is TaskKind.WEAVING:
            gaps = rng.uniform(*GAP_RANGE, size=2)
            pitch = d + gaps
            lo = max(tier.band[0], X_NEAR + 1.5 * d + gaps[0])
            hi = min(tier.band[1], X_FAR - 1.5 * d - gaps[1])
            if lo >= hi:
                continue
            xm = _uniform_in_tier(rng, tier, lo, hi)
            xs = [xm - pitch[0], xm, xm + pitch[1]]
            y = _lateral(rng, kind, [x + s * 0.5 * d for x in xs for s in (-1.0, 1.0)], w)
            obstacles = tuple(Obstacle((float(x), y), w, d, h) for x in xs)
            scene = SceneConfig(obstacles=obstacles, **extra)
            break
        lo, hi = _x_band(tier, d)
        x = _uniform_in_tier(rng, tier, lo, hi)
        y = _lateral(rng, kind, [x - 0.5 * d, x + 0.5 * d], w)
        ped = Obstacle((x, y), w, d, h)
        target = None
        if kind is TaskKind.KNOCKING:
            shape = str(rng.choice(list(TARGETS)))
            dims, mass = TARGETS[shape]
            foot = 0.5 * float(np.hypot(dims[0], dims[1]))
            ox = rng.uniform(-1, 1) * max(0.5 * d - foot, 0.0)
            oy = rng.uniform(-1, 1) * max(0.5 * w - foot, 0.0)
            target = TargetObject.on_pedestal(shape, ped, dims, mass, (ox, oy), float(rng.uniform(0, np.pi)))
        scene = SceneConfig(obstacles=(ped,), target=target, **extra)
        break
    return TaskInstance(kind, scene, tier, int(rng_seed))


# -------------------------------------------------------------- observation

@dataclass(frozen=True)
class Observation:
    values: np.ndarray
    mask: np.ndarray

    def as_array(self) -> np.ndarray:
        return np.r_[self.values, self.mask]


def observation_size(kind) -> int:
    return 5 * N_OBSTACLES[TaskKind.parse(kind)] + 7 + 2 + N_OBSTACLES[TaskKind.parse(kind)] + 1


def observe(scene: SceneConfig, cable_model: CableModel, kind=None) -> Observation:
    """Structured observation of a scene.

    Values: per obstacle (cx, cy, width, depth, height); target (x, y, z,
    yaw, dims) or zeros; cable length and mass. The mask flags each obstacle
    slot and the target slot as present. ``kind`` fixes the number of
    obstacle slots (default: as many as the scene has).
    """
    n = len(scene.obstacles) if kind is None else N_OBSTACLES[TaskKind.parse(kind)]
    if len(scene.obstacles) > n:
        raise ValueError(f"scene has {len(scene.obstacles)} obstacles, layout holds {n}")
    obs = np.zeros((n, 5))
    for i, o in enumerate(scene.obstacles):
        obs[i] = (o.center[0], o.center[1], o.width, o.depth, o.height)
    tgt = np.zeros(7)
    if scene.target is not None:
        t = scene.target
        tgt[:] = (*t.position, t.yaw, *t.dims)
    mask = np.r_[np.arange(n) < len(scene.obstacles), scene.target is not None].astype(float)
    values = np.r_[obs.reshape(-1), tgt, cable_model.total_length, cable_model.total_mass]
    return Observation(values, mask)


# ------------------------------------------------------------ goal predicates

class NotSettledError(RuntimeError):
    """The goal is evaluated on a cable that has not come to rest."""


def _station_y(p: np.ndarray, x0: float) -> np.ndarray:
    """Lateral positions where the cable polyline crosses the plane x = x0."""
    a, b = p[:-1], p[1:]
    da, db = a[:, 0] - x0, b[:, 0] - x0
    hit = (da * db <= 0) & (da != db)
    s = da[hit] / (da[hit] - db[hit])
    return a[hit, 1] + s * (b[hit, 1] - a[hit, 1])


def _resampled(p: np.ndarray, spacing: float) -> np.ndarray:
    seg = np.linalg.norm(np.diff(p, axis=0), axis=1)
    s = np.r_[0.0, np.cumsum(seg)]
    t = np.linspace(0.0, s[-1], max(2, int(np.ceil(s[-1] / spacing)) + 1))
    return np.stack([np.interp(t, s, p[:, k]) for k in range(3)], axis=1)


def _on_top(p: np.ndarray, o: Obstacle, ground: float, r: float) -> bool:
    x0, x1, y0, y1, _, top = o.bounds(ground)
    over = (p[:, 0] >= x0) & (p[:, 0] <= x1) & (p[:, 1] >= y0) & (p[:, 1] <= y1)
    return bool(np.any(p[over, 2] >= top - ON_TOP_MARGIN * r))


def _beyond(p: np.ndarray, o: Obstacle) -> bool:
    """Every part of the cable across the obstacle's footprint lies right of it."""
    x0, x1, y0 = o.center[0] - 0.5 * o.depth, o.center[0] + 0.5 * o.depth, o.center[1] - 0.5 * o.width
    ys = np.r_[_station_y(p, x0), _station_y(p, o.center[0]), _station_y(p, x1)]
    inside = p[(p[:, 0] >= x0) & (p[:, 0] <= x1), 1]
    ys = np.r_[ys, inside]
    return ys.size > 0 and bool(np.all(ys < y0))


def check_goal(kind, state_history, scene: SceneConfig, link_radius: float = 0.004) -> bool:
    """Whether the final, settled cable state achieves the task goal.

    ``state_history`` is a :class:`~cablewhip.cablesim.RolloutResult` or a
    sequence of (n+1, 3) particle arrays. Vaulting: the cable crosses the
    obstacle's footprint entirely right of it and does not rest on it.
    Knocking: the target's centre of mass ended lower than the pedestal top
    minus the target's half height. Weaving: at the three obstacle stations
    the cable lies alternately left and right of the obstacles (either
    chirality), clear of their faces and not resting on any of them.

    Raises
    ------
    NotSettledError
        If the history did not settle.
    """
    kind = TaskKind.parse(kind)
    if hasattr(state_history, "frames"):
        if not state_history.settled:
            raise NotSettledError("rollout did not settle")
        final = np.asarray(state_history.final.positions)
        target = state_history.target
    else:
        frames = list(state_history)
        if not frames:
            raise NotSettledError("empty history")
        final = np.asarray(frames[-1])
        if len(frames) > 1 and np.max(np.abs(final - np.asarray(frames[-2]))) > SETTLED_MOTION:
            raise NotSettledError("cable still moving in the last frames")
        target = scene.target
    p = _resampled(final, max(0.5 * link_radius, 0.01))
    g = scene.ground_height
    if kind is TaskKind.KNOCKING:
        if target is None:
            raise ValueError("knocking needs a target")
        ped = scene.obstacles[target.resting_on]
        return bool(target.position[2] < g + ped.height - target.half_height)
    if kind is TaskKind.VAULTING:
        o = scene.obstacles[0]
        return _beyond(p, o) and not _on_top(p, o, g, link_radius)
    signs = []
    for o in scene.obstacles:
        ys = _station_y(p, o.center[0])
        if ys.size != 1 or _on_top(p, o, g, link_radius):
            return False
        off = ys[0] - o.center[1]
        if abs(off) <= 0.5 * o.width:
            return False
        signs.append(np.sign(off))
    return len(signs) == 3 and signs[0] == -signs[1] == signs[2]
