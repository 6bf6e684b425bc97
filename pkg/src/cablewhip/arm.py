"""Kinematics of a 6-joint serial arm described by standard DH parameters.

Only what the trajectory generator and the cable simulator need: forward
kinematics (single and batched), the positional Jacobian, a closed-form
position solver for the first three joints with the wrist held fixed, and
limit checking of timed joint trajectories.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import List, NamedTuple

import numpy as np

N_JOINTS = 6
LIMIT_TOL = 1e-8


class OutOfReachError(ValueError):
    """The requested point lies outside the workspace of the arm."""

    def __init__(self, point, distance: float, min_reach: float, max_reach: float):
        self.point = tuple(float(c) for c in point)
        self.distance = distance
        self.min_reach = min_reach
        self.max_reach = max_reach
        super().__init__(
            f"point {self.point} is {distance:.4f} m from the shoulder; "
            f"reachable band is [{min_reach:.4f}, {max_reach:.4f}] m"
        )


@dataclass(frozen=True)
class ArmModel:
    # rows of (link_length a, link_offset d, link_twist alpha, joint_offset)
    dh_rows: np.ndarray
    q_min: np.ndarray
    q_max: np.ndarray
    v_min: np.ndarray
    v_max: np.ndarray
    a_min: np.ndarray
    a_max: np.ndarray
    j_min: np.ndarray
    j_max: np.ndarray
    control_period: float = 0.008
    name: str = "arm"
    note: str = ""

    def __post_init__(self):
        rows = np.asarray(self.dh_rows, dtype=float)
        if rows.shape != (N_JOINTS, 4):
            raise ValueError(f"dh_rows must be {N_JOINTS}x4, got {rows.shape}")
        object.__setattr__(self, "dh_rows", rows)
        for name in ("q_min", "q_max", "v_min", "v_max", "a_min", "a_max", "j_min", "j_max"):
            v = np.asarray(getattr(self, name), dtype=float).reshape(-1)
            if v.size != N_JOINTS or not np.all(np.isfinite(v)):
                raise ValueError(f"{name} must hold {N_JOINTS} finite values")
            v.setflags(write=False)
            object.__setattr__(self, name, v)
        rows.setflags(write=False)
        for lo, hi in (("q_min", "q_max"), ("v_min", "v_max"), ("a_min", "a_max"), ("j_min", "j_max")):
            if np.any(getattr(self, lo) >= getattr(self, hi)):
                raise ValueError(f"{lo} must be strictly below {hi}")
        if not self.control_period > 0:
            raise ValueError("control_period must be positive")

    @classmethod
    def from_dict(cls, d: dict) -> "ArmModel":
        keys = ("q_min", "q_max", "v_min", "v_max", "a_min", "a_max", "j_min", "j_max")
        return cls(
            dh_rows=np.array(d["dh_rows"], dtype=float),
            control_period=float(d.get("control_period", 0.008)),
            name=d.get("name", "arm"),
            note=d.get("note", ""),
            **{k: np.array(d[k], dtype=float) for k in keys},
        )

    def to_dict(self) -> dict:
        out = {"name": self.name, "note": self.note, "dh_rows": self.dh_rows.tolist()}
        for k in ("q_min", "q_max", "v_min", "v_max", "a_min", "a_max", "j_min", "j_max"):
            out[k] = getattr(self, k).tolist()
        out["control_period"] = self.control_period
        return out


def load_arm(path=None) -> ArmModel:
    """Load an arm parameter file; ``None`` gives the shipped nominal UR5-like arm."""
    if path is None:
        text = resources.files("cablewhip").joinpath("data/ur5_nominal.json").read_text()
    else:
        text = Path(path).read_text()
    return ArmModel.from_dict(json.loads(text))


class Pose(NamedTuple):
    position: np.ndarray
    orientation: np.ndarray

    def as_matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.orientation
        T[:3, 3] = self.position
        return T


def dh_transform(theta: float, a: float, d: float, alpha: float) -> np.ndarray:
    """Rz(theta) Tz(d) Tx(a) Rx(alpha)."""
    ct, st = np.cos(theta), np.sin(theta)
    ca, sa = np.cos(alpha), np.sin(alpha)
    return np.array(
        [
            [ct, -st * ca, st * sa, a * ct],
            [st, ct * ca, -ct * sa, a * st],
            [0.0, sa, ca, d],
            [0.0, 0.0, 0.0, 1.0],
        ]
    )


def joint_frames(model: ArmModel, q) -> List[np.ndarray]:
    """Homogeneous transforms of frames 0..6 in the base frame."""
    q = np.asarray(q, dtype=float)
    frames = [np.eye(4)]
    T = np.eye(4)
    for i, (a, d, alpha, off) in enumerate(model.dh_rows):
        T = T @ dh_transform(q[i] + off, a, d, alpha)
        frames.append(T)
    return frames


def forward_kinematics(model: ArmModel, q) -> Pose:
    q = np.asarray(q, dtype=float)
    if q.shape != (N_JOINTS,):
        raise ValueError(f"expected {N_JOINTS} joint values, got shape {q.shape}")
    T = joint_frames(model, q)[-1]
    return Pose(T[:3, 3].copy(), T[:3, :3].copy())


def fk_positions(model: ArmModel, Q) -> np.ndarray:
    """End-effector positions for a batch of configurations, shape (N, 3)."""
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    N = Q.shape[0]
    T = np.broadcast_to(np.eye(4), (N, 4, 4)).copy()
    for i, (a, d, alpha, off) in enumerate(model.dh_rows):
        th = Q[:, i] + off
        ct, st = np.cos(th), np.sin(th)
        ca, sa = np.cos(alpha), np.sin(alpha)
        Ti = np.zeros((N, 4, 4))
        Ti[:, 0, 0] = ct
        Ti[:, 0, 1] = -st * ca
        Ti[:, 0, 2] = st * sa
        Ti[:, 0, 3] = a * ct
        Ti[:, 1, 0] = st
        Ti[:, 1, 1] = ct * ca
        Ti[:, 1, 2] = -ct * sa
        Ti[:, 1, 3] = a * st
        Ti[:, 2, 1] = sa
        Ti[:, 2, 2] = ca
        Ti[:, 2, 3] = d
        Ti[:, 3, 3] = 1.0
        T = T @ Ti
    return T[:, :3, 3].copy()


def position_jacobian(model: ArmModel, q) -> np.ndarray:
    """3x6 Jacobian of the end-effector position (revolute joints)."""
    frames = joint_frames(model, q)
    p_e = frames[-1][:3, 3]
    J = np.zeros((3, N_JOINTS))
    for i in range(N_JOINTS):
        z = frames[i][:3, 2]
        p = frames[i][:3, 3]
        J[:, i] = np.cross(z, p_e - p)
    return J


# ------------------------------------------------------------------ apex solver

@dataclass(frozen=True)
class _PlanarChain:
    lateral: float  # constant offset perpendicular to the arm plane
    base_a: float
    base_d: float
    base_sign: float  # sin(alpha_1)
    l1: float
    l2: float
    phi1: float  # angle of link 1 relative to theta_2
    phi2: float  # angle of the rigid forearm+wrist vector relative to theta_2 + theta_3

    @property
    def max_reach(self) -> float:
        return self.l1 + self.l2

    @property
    def min_reach(self) -> float:
        return abs(self.l1 - self.l2)


def _planar_chain(model: ArmModel, wrist) -> _PlanarChain:
    rows = model.dh_rows
    a1, d1, al1, _ = rows[0]
    a2, d2, al2, _ = rows[1]
    a3, d3, al3, _ = rows[2]
    if abs(abs(np.sin(al1)) - 1) > 1e-9 or abs(al2) > 1e-9 or abs(al3) > 1e-9:
        raise ValueError("apex_ik needs a vertical base axis followed by two parallel joints")
    wrist = np.asarray(wrist, dtype=float)
    # end effector expressed in frame 3 with joints 4-6 fixed
    T = np.eye(4)
    for i in range(3, 6):
        a, d, alpha, off = rows[i]
        T = T @ dh_transform(wrist[i - 3] + off, a, d, alpha)
    w3 = T[:3, 3]
    # frame 2 coordinates before the q3 rotation: Rx(alpha3) w3 + (a3, 0, d3)
    u = w3 + np.array([a3, 0.0, d3])
    # frame-1 planar coordinates: X + iY = a2 e^{i th2} + |u| e^{i(th2 + th3 + phi)}, Z constant
    lateral_z = d2 + u[2]
    s1 = np.sin(al1)
    return _PlanarChain(
        lateral=-s1 * lateral_z,
        base_a=a1,
        base_d=d1,
        base_sign=s1,
        l1=abs(a2),
        l2=float(np.hypot(u[0], u[1])),
        phi1=0.0 if a2 >= 0 else np.pi,
        phi2=float(np.arctan2(u[1], u[0])),
    )


def _wrap(angle):
    return (np.asarray(angle) + np.pi) % (2 * np.pi) - np.pi


def reach_limits(model: ArmModel, wrist) -> tuple:
    ch = _planar_chain(model, wrist)
    return ch.min_reach, ch.max_reach


class JointLimitError(ValueError):
    """No inverse kinematics branch respects the joint limits."""


def _planar_point(ch: _PlanarChain, point, radial_sign: float):
    x, y, z = (float(c) for c in point)
    r2 = x * x + y * y
    R = radial_sign * np.sqrt(max(r2 - ch.lateral**2, 0.0))
    th1 = np.arctan2(y, x) - np.arctan2(ch.lateral, R)
    return th1, R - ch.base_a, (z - ch.base_d) * ch.base_sign


def shoulder_distance(model: ArmModel, point, wrist=(0.0, 0.0, 0.0), radial_sign: float = -1.0) -> float:
    """Distance from the shoulder axis to ``point`` measured in the arm plane."""
    ch = _planar_chain(model, wrist)
    _, X, Y = _planar_point(ch, point, radial_sign)
    return float(np.hypot(X, Y))


def _two_link(ch: _PlanarChain, X: float, Y: float):
    """Both (gamma, beta) solutions, ordered (higher elbow, lower elbow)."""
    D = float(np.hypot(X, Y))
    c = (D * D - ch.l1**2 - ch.l2**2) / (2 * ch.l1 * ch.l2)
    c = min(1.0, max(-1.0, c))
    sols = []
    for s in (+1.0, -1.0):
        beta = s * np.arccos(c)
        gamma = np.arctan2(Y, X) - np.arctan2(ch.l2 * np.sin(beta), ch.l1 + ch.l2 * np.cos(beta))
        sols.append((ch.base_sign * ch.l1 * np.sin(gamma), gamma, beta))
    sols.sort(key=lambda t: -t[0])
    return [(g, b) for _, g, b in sols]


def apex_ik(model: ArmModel, point, wrist=(0.0, 0.0, 0.0), elbow: str = "up") -> np.ndarray:
    """Base, shoulder and elbow angles placing the end effector at ``point``.

    ``point`` is in the arm base frame and joints 4-6 are held at ``wrist``.
    The base angle follows from the azimuth of the point (corrected for the
    lateral wrist offset); shoulder and elbow from the closed-form two-link
    solution in the arm plane. Of the two base branches the first one whose
    angles respect the joint limits is returned.

    Raises
    ------
    OutOfReachError
        If the point lies outside the annulus swept by the planar subchain.
    JointLimitError
        If the point is reachable only outside the joint limits.
    """
    if elbow not in ("up", "down"):
        raise ValueError("elbow must be 'up' or 'down'")
    ch = _planar_chain(model, wrist)
    point = np.asarray(point, dtype=float)
    if point[0] ** 2 + point[1] ** 2 < ch.lateral**2:
        raise OutOfReachError(point, float(np.hypot(point[0], point[1])), ch.min_reach, ch.max_reach)
    offs = model.dh_rows[:3, 3]
    candidates = []
    dist = np.nan
    for radial_sign in (-1.0, 1.0):
        th1, X, Y = _planar_point(ch, point, radial_sign)
        D = float(np.hypot(X, Y))
        if D > ch.max_reach + 1e-12 or D < ch.min_reach - 1e-12:
            if radial_sign < 0:
                dist = D
            continue
        gamma, beta = _two_link(ch, X, Y)[0 if elbow == "up" else 1]
        th2 = gamma - ch.phi1
        th3 = beta + ch.phi1 - ch.phi2
        q = _wrap(np.array([th1, th2, th3]) - offs)
        candidates.append(q)
        if np.all(q >= model.q_min[:3]) and np.all(q <= model.q_max[:3]):
            return q
    if not candidates:
        raise OutOfReachError(point, dist, ch.min_reach, ch.max_reach)
    raise JointLimitError(f"no branch for {tuple(point)} within joint limits: {candidates}")


def is_elbow_up(model: ArmModel, q) -> bool:
    """True if ``q`` is the higher-elbow of the two planar solutions for its end-effector position."""
    q = np.asarray(q, dtype=float)
    ch = _planar_chain(model, q[3:])
    th2 = q[1] + model.dh_rows[1, 3]
    th3 = q[2] + model.dh_rows[2, 3]
    gamma = th2 + ch.phi1
    X = ch.l1 * np.cos(gamma) + ch.l2 * np.cos(th2 + th3 + ch.phi2)
    Y = ch.l1 * np.sin(gamma) + ch.l2 * np.sin(th2 + th3 + ch.phi2)
    mirrored = 2 * np.arctan2(Y, X) - gamma
    return bool(ch.base_sign * np.sin(gamma) >= ch.base_sign * np.sin(mirrored) - 1e-12)


# ----------------------------------------------------------------- limit checks

class Violation(NamedTuple):
    t: int
    joint: int
    quantity: str
    value: float
    bound: float


def within_limits(model: ArmModel, trajectory, tol: float = LIMIT_TOL) -> List[Violation]:
    """Every (sample, joint, quantity) exceeding its bound by more than ``tol``.

    ``trajectory`` needs ``q``, ``v``, ``a`` arrays of shape (H+1, 6) and the
    step ``h``; jerk is the forward difference of acceleration over ``h``.
    """
    q, v, a = (np.asarray(getattr(trajectory, k)) for k in ("q", "v", "a"))
    out: List[Violation] = []
    series = [("q", q, model.q_min, model.q_max), ("v", v, model.v_min, model.v_max), ("a", a, model.a_min, model.a_max)]
    if len(a) > 1:
        series.append(("j", np.diff(a, axis=0) / trajectory.h, model.j_min, model.j_max))
    for name, vals, lo, hi in series:
        for t, j in zip(*np.nonzero(vals < lo - tol)):
            out.append(Violation(int(t), int(j), name, float(vals[t, j]), float(lo[j])))
        for t, j in zip(*np.nonzero(vals > hi + tol)):
            out.append(Violation(int(t), int(j), name, float(vals[t, j]), float(hi[j])))
    out.sort(key=lambda e: (e.t, e.joint, e.quantity))
    return out


def radial_branch(model: ArmModel, q) -> float:
    """-1.0 or +1.0: which base branch of :func:`apex_ik` ``q`` belongs to."""
    q = np.asarray(q, dtype=float)
    ch = _planar_chain(model, q[3:])
    th2 = q[1] + model.dh_rows[1, 3]
    th3 = q[2] + model.dh_rows[2, 3]
    X = ch.l1 * np.cos(th2 + ch.phi1) + ch.l2 * np.cos(th2 + th3 + ch.phi2)
    return 1.0 if X + ch.base_a > 0 else -1.0
