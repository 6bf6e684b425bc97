"""Particle-chain cable fixed to a wall at one end and held by the gripper at the other.

The cable is a chain of ``n_links`` links between ``n_links + 1`` lumped
particles. Forces are gravity, a stretch spring per link, a quadratic bending
spring per particle triple and linear velocity damping; a dashpot on the
bending rate stands in for torsional friction. Each step is linearly implicit
Euler (one Newton linearisation of the implicit update), which leaves the
discrete mechanical energy non-increasing for a stationary gripper. Contacts
with the ground, obstacle boxes and the target are inelastic velocity-level
projections with Coulomb friction.

All time stepping runs inside numba kernels; the Python functions wrap them
with dataclasses and file I/O.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numba
import numpy as np

from .arm import ArmModel, Pose, fk_positions, load_arm

GRAVITY = 9.81
DEFAULT_DT = 1e-3
SUBSTEPS = 8
FRICTION = 0.3
TARGET_FRICTION = 0.3
KE_SETTLED = 2e-3  # J
SETTLE_CAP = 4.0  # s
MAX_DT = 5e-3

TARGET_SHAPES = ("cylinder", "ball", "cup", "box")
# target kernel state: x y z vx vy vz mode
_RESTING, _FALLING, _GROUNDED = 0, 1, 2
_SHAPE_CODE = {"cylinder": 0, "ball": 1, "cup": 0, "box": 2}


class SimulationDivergedError(RuntimeError):
    """A particle left the finite numbers."""

    def __init__(self, particle: int, substep: int):
        self.particle = particle
        self.substep = substep
        super().__init__(f"cable state diverged at particle {particle}, substep {substep}")


class NotSettledError(RuntimeError):
    """The goal check was asked about a cable that is still moving."""


# ------------------------------------------------------------------ data types

@dataclass(frozen=True)
class CableModel:
    n_links: int
    total_length: float  # m
    total_mass: float  # kg
    link_radius: float  # m
    stretch_stiffness: float  # N/m per link
    bend_stiffness: float  # N m/rad per joint
    torsion_stiffness: float  # N m s/rad, damping on the bending rate
    damping: float  # 1/s
    name: str = "cable"
    note: str = ""

    def __post_init__(self):
        if self.n_links < 10:
            raise ValueError("a cable needs at least 10 links")
        if not (self.total_length > 0 and self.total_mass > 0 and self.link_radius > 0):
            raise ValueError("length, mass and radius must be positive")
        if min(self.stretch_stiffness, self.bend_stiffness, self.torsion_stiffness, self.damping) < 0:
            raise ValueError("stiffness and damping must be non-negative")

    @property
    def rest_length(self) -> float:
        return self.total_length / self.n_links

    @property
    def masses(self) -> np.ndarray:
        m = np.full(self.n_links + 1, self.total_mass / self.n_links)
        m[[0, -1]] *= 0.5
        return m

    @property
    def max_dt(self) -> float:
        """Largest step the linearised implicit update is validated for."""
        return MAX_DT

    @classmethod
    def from_dict(cls, d: dict) -> "CableModel":
        keys = ("n_links", "total_length", "total_mass", "link_radius", "stretch_stiffness",
                "bend_stiffness", "torsion_stiffness", "damping", "name", "note")
        return cls(**{k: d[k] for k in keys if k in d})

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


PRESET_NAMES = ("18awg_orange", "16awg_white", "16awg_orange", "22awg_blue", "12awg_jump_rope")
DEFAULT_PRESET = "18awg_orange"


def load_cable(name_or_path=DEFAULT_PRESET) -> CableModel:
    """A shipped preset by name, or a preset JSON file."""
    if str(name_or_path) in PRESET_NAMES:
        text = resources.files("cablewhip").joinpath(f"data/cables/{name_or_path}.json").read_text()
    else:
        text = Path(name_or_path).read_text()
    return CableModel.from_dict(json.loads(text))


@dataclass
class CableState:
    positions: np.ndarray  # (n+1, 3)
    velocities: np.ndarray  # (n+1, 3)

    def copy(self) -> "CableState":
        return CableState(self.positions.copy(), self.velocities.copy())

    def chain_length(self) -> float:
        return float(np.linalg.norm(np.diff(self.positions, axis=0), axis=1).sum())


@dataclass(frozen=True)
class Obstacle:
    """Axis-aligned box standing on the ground: ``width`` along y, ``depth`` along x."""

    center: Tuple[float, float]
    width: float
    depth: float
    height: float

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        if min(self.width, self.depth, self.height) <= 0:
            raise ValueError("obstacle dimensions must be positive")

    @property
    def com(self) -> np.ndarray:
        return np.array([self.center[0], self.center[1], 0.5 * self.height])

    def bounds(self, ground: float = 0.0) -> np.ndarray:
        cx, cy = self.center
        return np.array([cx - 0.5 * self.depth, cx + 0.5 * self.depth,
                         cy - 0.5 * self.width, cy + 0.5 * self.width,
                         ground, ground + self.height])

    def to_dict(self) -> dict:
        return {"center": list(self.center), "width": self.width, "depth": self.depth, "height": self.height}


@dataclass(frozen=True)
class TargetObject:
    """Rigid target resting on obstacle ``resting_on``.

    ``dims`` are (diameter, diameter, height) for cylinder and cup,
    (diameter,) * 3 for the ball and (length x, length y, height) for the box.
    ``position`` is the centre of mass.
    """

    shape: str
    position: Tuple[float, float, float]
    yaw: float
    dims: Tuple[float, float, float]
    mass: float
    resting_on: int = 0
    velocity: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    mode: int = _RESTING

    def __post_init__(self):
        if self.shape not in TARGET_SHAPES:
            raise ValueError(f"unknown target shape {self.shape!r}")
        for k in ("position", "dims", "velocity"):
            object.__setattr__(self, k, tuple(float(c) for c in getattr(self, k)))
        if self.mass <= 0 or min(self.dims) <= 0:
            raise ValueError("target mass and dims must be positive")

    @property
    def half_height(self) -> float:
        return 0.5 * self.dims[2]

    def to_dict(self) -> dict:
        return {"shape": self.shape, "position": list(self.position), "yaw": self.yaw, "dims": list(self.dims),
                "mass": self.mass, "resting_on": self.resting_on}

    @classmethod
    def on_pedestal(cls, shape: str, pedestal: Obstacle, dims, mass: float, offset=(0.0, 0.0), yaw: float = 0.0,
                    index: int = 0, ground: float = 0.0) -> "TargetObject":
        x = pedestal.center[0] + offset[0]
        y = pedestal.center[1] + offset[1]
        z = ground + pedestal.height + 0.5 * dims[2]
        return cls(shape, (x, y, z), yaw, tuple(dims), mass, index)


@dataclass(frozen=True)
class SceneConfig:
    # 4.5 m from the arm base, mounted 0.5 m higher
    wall_anchor: Tuple[float, float, float] = (float(np.sqrt(20.0)), 0.0, 1.2)
    arm_base: Tuple[float, float, float] = (0.0, 0.0, 0.7)
    ground_height: float = 0.0
    obstacles: Tuple[Obstacle, ...] = ()
    target: Optional[TargetObject] = None
    # world position of the gripper at the trajectory start; the taut-pull
    # reset ends there
    gripper_start: Tuple[float, float, float] = (0.1892, 0.4972, 0.5221)
    cable_preset: str = DEFAULT_PRESET

    def __post_init__(self):
        for k in ("wall_anchor", "arm_base", "gripper_start"):
            object.__setattr__(self, k, tuple(float(c) for c in getattr(self, k)))
        object.__setattr__(self, "obstacles", tuple(self.obstacles))

    def to_dict(self) -> dict:
        return {
            "wall_anchor": list(self.wall_anchor),
            "arm_base": list(self.arm_base),
            "ground_height": self.ground_height,
            "obstacles": [o.to_dict() for o in self.obstacles],
            "target": None if self.target is None else self.target.to_dict(),
            "gripper_start": list(self.gripper_start),
            "cable_preset": self.cable_preset,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SceneConfig":
        target = d.get("target")
        return cls(
            wall_anchor=tuple(d["wall_anchor"]),
            arm_base=tuple(d["arm_base"]),
            ground_height=float(d.get("ground_height", 0.0)),
            obstacles=tuple(Obstacle(tuple(o["center"]), o["width"], o["depth"], o["height"]) for o in d.get("obstacles", [])),
            target=None if target is None else TargetObject(
                target["shape"], tuple(target["position"]), float(target.get("yaw", 0.0)),
                tuple(target["dims"]), float(target["mass"]), int(target.get("resting_on", 0))),
            gripper_start=tuple(d.get("gripper_start", cls.gripper_start)),
            cable_preset=d.get("cable_preset", DEFAULT_PRESET),
        )

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=2))
        return path

    @classmethod
    def load(cls, path) -> "SceneConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


# ------------------------------------------------------------------ kernels

@numba.njit(cache=True)
def _add_block(Ab, pi, pj, B):
    # lower band storage Ab[row, row - col]; pi >= pj are free-particle slots
    for a in range(3):
        for b in range(3):
            r = 3 * pi + a
            c = 3 * pj + b
            if r >= c:
                Ab[r, r - c] += B[a, b]


@numba.njit(cache=True)
def _band_cholesky_solve(Ab, rhs, p):
    n = Ab.shape[0]
    for i in range(n):
        j0 = max(0, i - p)
        for j in range(j0, i + 1):
            s = Ab[i, i - j]
            k0 = max(j0, j - p)
            for k in range(k0, j):
                s -= Ab[i, i - k] * Ab[j, j - k]
            if i == j:
                if s <= 0.0:
                    return False
                Ab[i, 0] = np.sqrt(s)
            else:
                Ab[i, i - j] = s / Ab[j, 0]
    for i in range(n):
        s = rhs[i]
        for k in range(max(0, i - p), i):
            s -= Ab[i, i - k] * rhs[k]
        rhs[i] = s / Ab[i, 0]
    for i in range(n - 1, -1, -1):
        s = rhs[i]
        for k in range(i + 1, min(n, i + p + 1)):
            s -= Ab[k, k - i] * rhs[k]
        rhs[i] = s / Ab[i, 0]
    return True


@numba.njit(cache=True)
def _potential(x, m, L, k, beta, g):
    n = x.shape[0] - 1
    U = 0.0
    for i in range(n + 1):
        U += m[i] * g * x[i, 2]
    for e in range(n):
        d0 = x[e + 1, 0] - x[e, 0]
        d1 = x[e + 1, 1] - x[e, 1]
        d2 = x[e + 1, 2] - x[e, 2]
        s = np.sqrt(d0 * d0 + d1 * d1 + d2 * d2) - L
        U += 0.5 * k * s * s
    for i in range(1, n):
        for c in range(3):
            s = x[i - 1, c] - 2.0 * x[i, c] + x[i + 1, c]
            U += 0.5 * beta * s * s
    return U


@numba.njit(cache=True)
def _energy(x, v, m, L, k, beta, g):
    T = 0.0
    for i in range(x.shape[0]):
        T += 0.5 * m[i] * (v[i, 0] ** 2 + v[i, 1] ** 2 + v[i, 2] ** 2)
    return T + _potential(x, m, L, k, beta, g)


@numba.njit(cache=True)
def _kinetic(v, m):
    T = 0.0
    for i in range(1, v.shape[0] - 1):
        T += 0.5 * m[i] * (v[i, 0] ** 2 + v[i, 1] ** 2 + v[i, 2] ** 2)
    return T


@numba.njit(cache=True)
def _box_push(p, prev, box, r):
    """Axis, side and surface coordinate to leave the inflated box, or axis -1 if outside."""
    lo0 = box[0] - r
    hi0 = box[1] + r
    lo1 = box[2] - r
    hi1 = box[3] + r
    top = box[5] + r
    if not (p[0] > lo0 and p[0] < hi0 and p[1] > lo1 and p[1] < hi1 and p[2] < top):
        return -1, 0.0, 0.0
    # penetration through each face, preferring faces the previous point was outside of
    best = -1
    bd = 0.0
    for f in range(10):
        face = f % 5
        if f < 5:
            if face == 0:
                out = prev[0] <= lo0
            elif face == 1:
                out = prev[0] >= hi0
            elif face == 2:
                out = prev[1] <= lo1
            elif face == 3:
                out = prev[1] >= hi1
            else:
                out = prev[2] >= top
            if not out:
                continue
        elif f == 5 and best >= 0:
            break
        if face == 0:
            dep = p[0] - lo0
        elif face == 1:
            dep = hi0 - p[0]
        elif face == 2:
            dep = p[1] - lo1
        elif face == 3:
            dep = hi1 - p[1]
        else:
            dep = top - p[2]
        if best < 0 or dep < bd:
            best = face
            bd = dep
    if best == 0:
        return 0, -1.0, lo0
    if best == 1:
        return 0, 1.0, hi0
    if best == 2:
        return 1, -1.0, lo1
    if best == 3:
        return 1, 1.0, hi1
    return 2, 1.0, top


@numba.njit(cache=True)
def _apply_contact(v, i, axis, side, surface, x_now, dt, mu):
    # inelastic: set the normal velocity so the particle ends on the surface
    vn_new = (surface - x_now) / dt
    dvn = vn_new - v[i, axis]
    if side * dvn <= 0.0:
        return 0.0
    v[i, axis] = vn_new
    t0 = (axis + 1) % 3
    t1 = (axis + 2) % 3
    vt = np.sqrt(v[i, t0] ** 2 + v[i, t1] ** 2)
    if vt > 0.0:
        s = max(0.0, 1.0 - mu * abs(dvn) / vt)
        v[i, t0] *= s
        v[i, t1] *= s
    return dvn


@numba.njit(cache=True)
def _target_contact(p, tstate, tshape, tdims, tyaw, r):
    """Outward normal and penetration of point ``p`` into the target, or depth <= 0."""
    c = tstate[:3]
    dx = p[0] - c[0]
    dy = p[1] - c[1]
    dz = p[2] - c[2]
    n = np.zeros(3)
    if tshape == 1:
        R = 0.5 * tdims[0] + r
        dist = np.sqrt(dx * dx + dy * dy + dz * dz)
        if dist >= R or dist == 0.0:
            return n, 0.0
        n[0] = dx / dist
        n[1] = dy / dist
        n[2] = dz / dist
        return n, R - dist
    hz = 0.5 * tdims[2] + r
    if abs(dz) >= hz:
        return n, 0.0
    if tshape == 0:
        R = 0.5 * tdims[0] + r
        rad = np.sqrt(dx * dx + dy * dy)
        if rad >= R:
            return n, 0.0
        side = R - rad
        vert = hz - abs(dz)
        if vert < side or rad == 0.0:
            n[2] = 1.0 if dz >= 0 else -1.0
            return n, vert
        n[0] = dx / rad
        n[1] = dy / rad
        return n, side
    # box in its yawed frame
    cy = np.cos(tyaw)
    sy = np.sin(tyaw)
    lx = cy * dx + sy * dy
    ly = -sy * dx + cy * dy
    hx = 0.5 * tdims[0] + r
    hy = 0.5 * tdims[1] + r
    if abs(lx) >= hx or abs(ly) >= hy:
        return n, 0.0
    px = hx - abs(lx)
    py = hy - abs(ly)
    pz = hz - abs(dz)
    if pz <= px and pz <= py:
        n[2] = 1.0 if dz >= 0 else -1.0
        return n, pz
    if px <= py:
        s = 1.0 if lx >= 0 else -1.0
        n[0] = s * cy
        n[1] = s * sy
        return n, px
    s = 1.0 if ly >= 0 else -1.0
    n[0] = -s * sy
    n[1] = s * cy
    return n, py


@numba.njit(cache=True)
def _target_step(tstate, J, tmass, thalf, pedestal, ground, mu, g, dt):
    """Advance the target one step under the contact impulse ``J`` (N s)."""
    mode = int(tstate[6])
    if mode == _GROUNDED:
        return
    if mode == _RESTING:
        vx = tstate[3]
        vy = tstate[4]
        budget = mu * tmass * g * dt
        jh = np.sqrt(J[0] * J[0] + J[1] * J[1])
        if vx == 0.0 and vy == 0.0:
            if jh > budget:
                s = (jh - budget) / (jh * tmass)
                vx = J[0] * s
                vy = J[1] * s
        else:
            vx += J[0] / tmass
            vy += J[1] / tmass
            sp = np.sqrt(vx * vx + vy * vy)
            dec = mu * g * dt
            if sp <= dec:
                vx = 0.0
                vy = 0.0
            else:
                vx *= 1.0 - dec / sp
                vy *= 1.0 - dec / sp
        tstate[3] = vx
        tstate[4] = vy
        tstate[0] += dt * vx
        tstate[1] += dt * vy
        if not (pedestal[0] <= tstate[0] <= pedestal[1] and pedestal[2] <= tstate[1] <= pedestal[3]):
            tstate[6] = _FALLING
        return
    tstate[3] += J[0] / tmass
    tstate[4] += J[1] / tmass
    tstate[5] += J[2] / tmass - g * dt
    for c in range(3):
        tstate[c] += dt * tstate[3 + c]
    if tstate[2] - thalf <= ground:
        tstate[2] = ground + thalf
        tstate[3] = 0.0
        tstate[4] = 0.0
        tstate[5] = 0.0
        tstate[6] = _GROUNDED


@numba.njit(cache=True)
def _substep(x, v, grip_new, m, L, k, beta, gamma, c, g, dt, boxes, ground, r, mu,
             has_target, tstate, tshape, tdims, tyaw, tmass, pedestal, tmu, Ab, rhs, Jt):
    n = x.shape[0] - 1
    nf = n - 1
    p = 8
    Ab[:, :] = 0.0
    dt2 = dt * dt
    vg = np.empty(3)
    for cc in range(3):
        vg[cc] = (grip_new[cc] - x[n, cc]) / dt
    # inertia, damping, gravity
    for i in range(1, n):
        s = i - 1
        for cc in range(3):
            Ab[3 * s + cc, 0] += m[i] * (1.0 + c * dt)
            rhs[3 * s + cc] = m[i] * v[i, cc]
        rhs[3 * s + 2] -= dt * m[i] * g
    # stretch springs
    B = np.empty((3, 3))
    for e in range(n):
        a = e
        b = e + 1
        d = x[b] - x[a]
        l = np.sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2])
        u = d / l
        T = k * (l - L)
        geo = max(T / l, 0.0)
        for i0 in range(3):
            for i1 in range(3):
                B[i0, i1] = dt2 * ((k - geo) * u[i0] * u[i1] + (geo if i0 == i1 else 0.0))
        if a >= 1:
            for cc in range(3):
                rhs[3 * (a - 1) + cc] += dt * T * u[cc]
            _add_block(Ab, a - 1, a - 1, B)
        if b <= n - 1:
            for cc in range(3):
                rhs[3 * (b - 1) + cc] -= dt * T * u[cc]
            _add_block(Ab, b - 1, b - 1, B)
        if a >= 1 and b <= n - 1:
            _add_block(Ab, b - 1, a - 1, -B)
        elif b == n and a >= 1:
            # gripper velocity is prescribed
            for i0 in range(3):
                for i1 in range(3):
                    rhs[3 * (a - 1) + i0] += B[i0, i1] * vg[i1]
    # bending springs and bending-rate dashpots over triples
    w = np.array([1.0, -2.0, 1.0])
    coef = dt2 * beta + dt * gamma
    for i in range(1, n):
        for cc in range(3):
            s = x[i - 1, cc] - 2.0 * x[i, cc] + x[i + 1, cc]
            for q in range(3):
                j = i - 1 + q
                if 1 <= j <= n - 1:
                    rhs[3 * (j - 1) + cc] -= dt * beta * w[q] * s
        for q0 in range(3):
            j0 = i - 1 + q0
            if j0 < 1 or j0 > n - 1:
                continue
            for q1 in range(3):
                j1 = i - 1 + q1
                val = coef * w[q0] * w[q1]
                if 1 <= j1 <= n - 1:
                    if j0 >= j1:
                        for cc in range(3):
                            r0 = 3 * (j0 - 1) + cc
                            r1 = 3 * (j1 - 1) + cc
                            Ab[r0, r0 - r1] += val
                elif j1 == n:
                    for cc in range(3):
                        rhs[3 * (j0 - 1) + cc] -= val * vg[cc]
    if not _band_cholesky_solve(Ab, rhs, p):
        return False
    for i in range(1, n):
        for cc in range(3):
            v[i, cc] = rhs[3 * (i - 1) + cc]
    # contacts on the predicted positions
    pred = np.empty(3)
    prev = np.empty(3)
    for i in range(1, n):
        for cc in range(3):
            pred[cc] = x[i, cc] + dt * v[i, cc]
        if pred[2] < ground + r:
            _apply_contact(v, i, 2, 1.0, ground + r, x[i, 2], dt, mu)
        for bi in range(boxes.shape[0]):
            for cc in range(3):
                pred[cc] = x[i, cc] + dt * v[i, cc]
            axis, side, surf = _box_push(pred, x[i], boxes[bi], r)
            if axis >= 0:
                _apply_contact(v, i, axis, side, surf, x[i, axis], dt, mu)
    # link midpoints against the boxes so thin obstacles cannot slip between particles
    for e in range(n):
        for bi in range(boxes.shape[0]):
            for cc in range(3):
                pred[cc] = 0.5 * (x[e, cc] + x[e + 1, cc]) + 0.5 * dt * ((v[e, cc] if e >= 1 else 0.0) + (v[e + 1, cc] if e + 1 <= n - 1 else vg[cc]))
                prev[cc] = 0.5 * (x[e, cc] + x[e + 1, cc])
            axis, side, surf = _box_push(pred, prev, boxes[bi], r)
            if axis < 0:
                continue
            need = (surf - pred[axis]) / dt
            for j in (e, e + 1):
                if 1 <= j <= n - 1:
                    v[j, axis] += need
    Jt[:] = 0.0
    if has_target and tstate[6] != _GROUNDED:
        for i in range(1, n):
            for cc in range(3):
                pred[cc] = x[i, cc] + dt * v[i, cc]
            nrm, depth = _target_contact(pred, tstate, tshape, tdims, tyaw, r)
            if depth > 0.0:
                for cc in range(3):
                    dv = depth / dt * nrm[cc]
                    v[i, cc] += dv
                    Jt[cc] -= m[i] * dv
    for i in range(1, n):
        for cc in range(3):
            x[i, cc] += dt * v[i, cc]
    for cc in range(3):
        v[n, cc] = vg[cc]
        x[n, cc] = grip_new[cc]
        v[0, cc] = 0.0
    if has_target:
        _target_step(tstate, Jt, tmass, 0.5 * tdims[2], pedestal, ground, tmu, g, dt)
    return True


@numba.njit(cache=True)
def _simulate(x, v, grip, m, L, k, beta, gamma, c, g, dt, boxes, ground, r, mu,
              has_target, tstate, tshape, tdims, tyaw, tmass, pedestal, tmu,
              settle_steps, ke_tol, record_every, frames, tframes, energies):
    """Drive the gripper along ``grip`` then hold it and settle.

    Returns (status, substeps_taken, frames_written, bad_particle); status is
    0 settled, 1 cap reached, 2 diverged.
    """
    n = x.shape[0] - 1
    nf = n - 1
    Ab = np.zeros((3 * nf, 9))
    rhs = np.zeros(3 * nf)
    Jt = np.zeros(3)
    n_drive = grip.shape[0] - 1
    nfr = 0
    frames[0] = x
    tframes[0] = tstate
    nfr = 1
    audit = energies.shape[0] > 0
    if audit:
        energies[0] = _energy(x, v, m, L, k, beta, g)
    total = n_drive + settle_steps
    status = 1
    steps = 0
    hold = grip[n_drive].copy()
    for s in range(total):
        target = grip[s + 1] if s < n_drive else hold
        ok = _substep(x, v, target, m, L, k, beta, gamma, c, g, dt, boxes, ground, r, mu,
                      has_target, tstate, tshape, tdims, tyaw, tmass, pedestal, tmu, Ab, rhs, Jt)
        steps = s + 1
        bad = -1
        if ok:
            for i in range(n + 1):
                if not (np.isfinite(x[i, 0]) and np.isfinite(x[i, 1]) and np.isfinite(x[i, 2])
                        and np.isfinite(v[i, 0]) and np.isfinite(v[i, 1]) and np.isfinite(v[i, 2])):
                    bad = i
                    break
        else:
            bad = 0
        if bad >= 0:
            return 2, steps, nfr, bad
        if audit and s + 1 < energies.shape[0]:
            energies[s + 1] = _energy(x, v, m, L, k, beta, g)
        settled = s >= n_drive and _kinetic(v, m) < ke_tol
        if (steps % record_every == 0 or settled or steps == total) and nfr < frames.shape[0]:
            frames[nfr] = x
            tframes[nfr] = tstate
            nfr += 1
        if settled:
            status = 0
            break
    return status, steps, nfr, -1


# ------------------------------------------------------------------ Python API

def _model_args(model: CableModel):
    L = model.rest_length
    beta = model.bend_stiffness / L**2
    gamma = model.torsion_stiffness / L**2
    return model.masses, L, model.stretch_stiffness, beta, gamma, model.damping


def _scene_args(scene: SceneConfig, target: Optional[TargetObject]):
    boxes = np.array([o.bounds(scene.ground_height) for o in scene.obstacles], dtype=float).reshape(-1, 6)
    if target is None:
        return boxes, False, np.zeros(7), 0, np.ones(3), 0.0, 1.0, np.zeros(6)
    ped = scene.obstacles[target.resting_on].bounds(scene.ground_height)
    tstate = np.r_[target.position, target.velocity, float(target.mode)]
    return (boxes, True, tstate, _SHAPE_CODE[target.shape], np.array(target.dims), float(target.yaw),
            float(target.mass), ped)


def _target_from_state(target: TargetObject, tstate: np.ndarray) -> TargetObject:
    return replace(target, position=tuple(tstate[:3]), velocity=tuple(tstate[3:6]), mode=int(tstate[6]))


def energy(model: CableModel, state: CableState, g: float = GRAVITY) -> float:
    """Kinetic + gravitational + stretch + bending energy (J)."""
    m, L, k, beta, _, _ = _model_args(model)
    return float(_energy(state.positions, state.velocities, m, L, k, beta, g))


def step(
    model: CableModel,
    scene: SceneConfig,
    state: CableState,
    gripper_pose,
    gripper_velocity,
    dt: float = DEFAULT_DT,
    g: float = GRAVITY,
    target: Optional[TargetObject] = None,
) -> CableState:
    """Advance the cable by one step of ``dt`` seconds.

    ``gripper_pose`` (a :class:`~cablewhip.arm.Pose` or a world position) is
    where the gripper is at the end of the step; ``gripper_velocity`` must be
    consistent with it and is only checked for finiteness. The target, if any,
    is read from ``target`` (default: the scene's) and not returned; use
    :func:`rollout` to follow it.

    Raises
    ------
    SimulationDivergedError
        If any particle becomes non-finite.
    """
    if not 0 < dt <= model.max_dt:
        raise ValueError(f"dt={dt} outside (0, {model.max_dt}]")
    pos = np.asarray(gripper_pose.position if isinstance(gripper_pose, Pose) else gripper_pose, dtype=float)
    if not np.all(np.isfinite(np.asarray(gripper_velocity, dtype=float))):
        raise ValueError("gripper velocity must be finite")
    x = np.ascontiguousarray(state.positions, dtype=float).copy()
    v = np.ascontiguousarray(state.velocities, dtype=float).copy()
    if x.shape != (model.n_links + 1, 3):
        raise ValueError("state does not match the cable model")
    m, L, k, beta, gamma, c = _model_args(model)
    tgt = scene.target if target is None else target
    boxes, has_t, tstate, tshape, tdims, tyaw, tmass, ped = _scene_args(scene, tgt)
    nf = model.n_links - 1
    ok = _substep(x, v, pos, m, L, k, beta, gamma, c, g, dt, boxes, scene.ground_height, model.link_radius,
                  FRICTION, has_t, tstate, tshape, tdims, tyaw, tmass, ped, TARGET_FRICTION,
                  np.zeros((3 * nf, 9)), np.zeros(3 * nf), np.zeros(3))
    bad = np.flatnonzero(~np.all(np.isfinite(np.c_[x, v]), axis=1))
    if not ok or bad.size:
        raise SimulationDivergedError(int(bad[0]) if bad.size else 0, 0)
    x[0] = scene.wall_anchor
    return CableState(x, v)


@dataclass
class RolloutResult:
    times: np.ndarray  # (F,)
    frames: np.ndarray  # (F, n+1, 3) particle positions
    target_frames: Optional[np.ndarray]  # (F, 7) target x y z vx vy vz mode
    final: CableState
    target: Optional[TargetObject]
    settled: bool
    substeps: int
    drive_substeps: int
    energies: Optional[np.ndarray] = None

    @property
    def final_positions(self) -> np.ndarray:
        return self.final.positions


def gripper_path(arm: ArmModel, scene: SceneConfig, trajectory, substeps_per_sample: int = SUBSTEPS) -> np.ndarray:
    """World gripper positions at every substep along ``trajectory``.

    Between samples the joints follow q_t + v_t s + a_t s^2 / 2, the
    trajectory's own defining relation.
    """
    q, v, a = (np.asarray(getattr(trajectory, k)) for k in ("q", "v", "a"))
    H = q.shape[0] - 1
    s = (np.arange(substeps_per_sample) / substeps_per_sample * trajectory.h)[None, :, None]
    Q = (q[:-1, None] + v[:-1, None] * s + 0.5 * a[:-1, None] * s * s).reshape(-1, q.shape[1])
    Q = np.vstack([Q, q[-1]])
    return fk_positions(arm, Q) + np.asarray(scene.arm_base)


def rollout(
    model: CableModel,
    scene: SceneConfig,
    state: CableState,
    trajectory,
    arm: Optional[ArmModel] = None,
    substeps_per_sample: int = SUBSTEPS,
    settle_time: float = SETTLE_CAP,
    ke_threshold: float = KE_SETTLED,
    record_every: Optional[int] = None,
    audit_energy: bool = False,
    g: float = GRAVITY,
) -> RolloutResult:
    """Execute ``trajectory`` with the cable attached, then let it settle.

    The step is ``trajectory.h / substeps_per_sample``. After the last
    sample the gripper is held still until the free particles' kinetic energy
    drops below ``ke_threshold`` or ``settle_time`` elapses. Frames are
    recorded every ``record_every`` substeps (default: once per trajectory
    sample) plus the final state.
    """
    arm = load_arm() if arm is None else arm
    dt = trajectory.h / substeps_per_sample
    if not 0 < dt <= model.max_dt:
        raise ValueError(f"substep {dt} outside (0, {model.max_dt}]")
    grip = gripper_path(arm, scene, trajectory, substeps_per_sample)
    return _run(model, scene, state, grip, dt, settle_time, ke_threshold,
                substeps_per_sample if record_every is None else record_every, audit_energy, g)


def _run(model, scene, state, grip, dt, settle_time, ke_threshold, record_every, audit_energy, g, target=None):
    x = np.ascontiguousarray(state.positions, dtype=float).copy()
    v = np.ascontiguousarray(state.velocities, dtype=float).copy()
    if x.shape != (model.n_links + 1, 3):
        raise ValueError("state does not match the cable model")
    m, L, k, beta, gamma, c = _model_args(model)
    tgt = scene.target if target is None else target
    boxes, has_t, tstate, tshape, tdims, tyaw, tmass, ped = _scene_args(scene, tgt)
    n_drive = grip.shape[0] - 1
    settle_steps = int(round(settle_time / dt))
    total = n_drive + settle_steps
    n_frames = total // record_every + 3
    frames = np.zeros((n_frames, x.shape[0], 3))
    tframes = np.zeros((n_frames, 7))
    energies = np.full(total + 1 if audit_energy else 0, np.nan)
    status, steps, nfr, bad = _simulate(
        x, v, np.ascontiguousarray(grip), m, L, k, beta, gamma, c, g, dt, boxes, scene.ground_height,
        model.link_radius, FRICTION, has_t, tstate, tshape, tdims, tyaw, tmass, ped, TARGET_FRICTION,
        settle_steps, ke_threshold, record_every, frames, tframes, energies)
    if status == 2:
        raise SimulationDivergedError(bad, steps)
    times = np.zeros(nfr)
    # frame times: every record_every substeps, the last frame at the stop time
    times[1:] = np.minimum(np.arange(1, nfr) * record_every, steps) * dt
    times[-1] = steps * dt
    return RolloutResult(
        times=times,
        frames=frames[:nfr],
        target_frames=tframes[:nfr] if has_t else None,
        final=CableState(x, v),
        target=_target_from_state(tgt, tstate) if has_t else None,
        settled=status == 0,
        substeps=steps,
        drive_substeps=n_drive,
        energies=energies[: steps + 1] if audit_energy else None,
    )


def settle(
    model: CableModel,
    scene: SceneConfig,
    state: CableState,
    gripper_position=None,
    dt: float = DEFAULT_DT,
    settle_time: float = SETTLE_CAP,
    ke_threshold: float = KE_SETTLED,
    record_every: int = 1,
    audit_energy: bool = False,
    g: float = GRAVITY,
) -> RolloutResult:
    """Hold the gripper still (default: where the cable's last particle is) and let the cable settle."""
    if not 0 < dt <= model.max_dt:
        raise ValueError(f"dt={dt} outside (0, {model.max_dt}]")
    pos = state.positions[-1] if gripper_position is None else gripper_position
    grip = np.asarray(pos, dtype=float).reshape(1, 3)
    return _run(model, scene, state, grip, dt, settle_time, ke_threshold, record_every, audit_energy, g)


def knock_dynamics(
    target: TargetObject,
    impulses,
    pedestal: Obstacle,
    dt: float = DEFAULT_DT,
    ground: float = 0.0,
    mu: float = TARGET_FRICTION,
    g: float = GRAVITY,
) -> TargetObject:
    """Apply one contact impulse (N s) per step to a target and return its new state.

    On the pedestal the target slides under Coulomb friction: an impulse
    below the static budget ``mu m g dt`` does not move it. Once its centre
    of mass leaves the pedestal's top face it falls ballistically to the
    ground.
    """
    J = np.atleast_2d(np.asarray(impulses, dtype=float))
    tstate = np.r_[target.position, target.velocity, float(target.mode)]
    ped = pedestal.bounds(ground)
    for Jk in J:
        _target_step(tstate, Jk, target.mass, target.half_height, ped, ground, mu, g, dt)
    return _target_from_state(target, tstate)


def hanging_state(model: CableModel, a, b) -> CableState:
    """Particles evenly spaced on the straight segment from ``a`` to ``b`` at rest."""
    t = np.linspace(0.0, 1.0, model.n_links + 1)[:, None]
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return CableState(a + t * (b - a), np.zeros((model.n_links + 1, 3)))


_RESET_COUNT = [0]
_RESET_CACHE: dict = {}
PULL_ANGLE = np.deg2rad(20.0)
PULL_SPEED = 0.5  # m/s
PULL_STRETCH = 1.002


def reset_count() -> int:
    """Number of :func:`taut_pull_reset` calls so far (instrumentation)."""
    return _RESET_COUNT[0]


def clear_reset_cache() -> None:
    """Forget memoised reset states so the next reset recomputes from scratch."""
    _RESET_CACHE.clear()


def taut_pull_reset(model: CableModel, scene: SceneConfig, dt: float = DEFAULT_DT) -> CableState:
    """Canonical pre-motion cable state for ``scene``.

    The cable starts straight and slightly stretched, so its tension is
    uniform, along a ray from the wall anchor swung ``PULL_ANGLE`` to the
    left of the gripper start. The gripper end is then pulled slowly along a
    straight path to ``scene.gripper_start``, held, and the cable settles.
    The procedure depends only on its arguments, so repeated calls agree
    exactly.
    """
    _RESET_COUNT[0] += 1
    key = (model, scene.wall_anchor, scene.ground_height, scene.obstacles, scene.gripper_start, dt)
    hit = _RESET_CACHE.get(key)
    if hit is not None:
        return hit.copy()
    W = np.asarray(scene.wall_anchor)
    S = np.asarray(scene.gripper_start)
    d = S[:2] - W[:2]
    ang = np.arctan2(d[1], d[0]) - PULL_ANGLE  # toward +y when looking from the robot
    reach = model.total_length * PULL_STRETCH
    dz = S[2] - W[2]
    horiz = np.sqrt(max(reach**2 - dz**2, 0.0))
    P = np.r_[W[:2] + horiz * np.array([np.cos(ang), np.sin(ang)]), S[2]]
    state = hanging_state(model, W, P)
    n_pull = max(1, int(np.ceil(np.linalg.norm(S - P) / (PULL_SPEED * dt))))
    t = np.linspace(0.0, 1.0, n_pull + 1)[:, None]
    smooth = t * t * (3 - 2 * t)
    grip = P + smooth * (S - P)
    res = _run(model, replace(scene, target=None), state, grip, dt, SETTLE_CAP, KE_SETTLED * 0.05, 10**9, False, GRAVITY)
    out = res.final
    out.positions[0] = W
    out.velocities[:] = 0.0
    _RESET_CACHE[key] = out.copy()
    return out


def write_trace_csv(result: RolloutResult, path) -> Path:
    """One row per (frame, particle): time_s, particle_index, x, y, z."""
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with tmp.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time_s", "particle_index", "x", "y", "z"])
        for t, fr in zip(result.times, result.frames):
            for i, p in enumerate(fr):
                w.writerow([repr(float(t)), i, repr(float(p[0])), repr(float(p[1])), repr(float(p[2]))])
    tmp.replace(path)
    return path


def read_trace_csv(path) -> Tuple[np.ndarray, np.ndarray]:
    """Inverse of :func:`write_trace_csv`: (times, frames)."""
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    n = int(data[:, 1].max()) + 1
    frames = data[:, 2:].reshape(-1, n, 3)
    return data[::n, 0], frames
