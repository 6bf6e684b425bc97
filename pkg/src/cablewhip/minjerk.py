"""Time-optimal minimum-jerk joint trajectories through an apex configuration.

A trajectory is discretised into H+1 samples ``h`` seconds apart, each with
joint positions, velocities and accelerations. For a given H the jerk
minimising trajectory is a convex QP; the horizon is then shortened until
the QP becomes infeasible and the shortest feasible solution is kept.

Every constraint of the trajectory QP couples a single joint with itself, so
the six-joint problem is block diagonal. ``solve_horizon`` exploits this and
solves one small QP per joint; :func:`assemble_qp` still builds the full
problem for inspection and verification.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field, replace
from functools import lru_cache
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp

from .arm import N_JOINTS, ArmModel, load_arm
from .qpcore import QpProblem, QpSolution, SolverSettings, Status, solve

log = logging.getLogger(__name__)

LINEAR = "linear"
BISECT = "bisect"


class ApexLimitError(ValueError):
    """The expanded apex configuration violates the joint limits."""


class NoFeasibleTrajectoryError(RuntimeError):
    """The trajectory QP is infeasible at the initial horizon."""

    def __init__(self, message: str, certificate: Optional[np.ndarray] = None, horizon: int = -1):
        super().__init__(message)
        self.certificate = certificate
        self.horizon = horizon


@dataclass(frozen=True)
class ApexAction:
    """Base, shoulder and elbow angles (rad) of the trajectory midpoint."""

    apex_joints: Tuple[float, float, float]

    def __post_init__(self):
        a = tuple(float(v) for v in np.asarray(self.apex_joints, dtype=float).reshape(-1))
        if len(a) != 3:
            raise ValueError("an apex action has exactly three joint values")
        object.__setattr__(self, "apex_joints", a)

    def as_array(self) -> np.ndarray:
        return np.array(self.apex_joints)

    def clamp(self, arm: ArmModel) -> "ApexAction":
        return ApexAction(np.clip(self.as_array(), arm.q_min[:3], arm.q_max[:3]))

    def within(self, arm: ArmModel) -> bool:
        a = self.as_array()
        return bool(np.all(a >= arm.q_min[:3]) and np.all(a <= arm.q_max[:3]))


@dataclass(frozen=True)
class TaskProfile:
    """Task-specific pieces of the trajectory function."""

    name: str
    start: Tuple[float, ...]
    end: Tuple[float, ...]
    # wrist joints = wrist_map @ apex + wrist_offset
    wrist_map: Tuple[Tuple[float, float, float], ...] = ((0.0,) * 3,) * 3
    wrist_offset: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    h_multiple: int = 1
    H_init: int = 250
    H_min: int = 2
    Q_weights: Tuple[float, ...] = (1.0,) * N_JOINTS
    search: str = LINEAR

    def __post_init__(self):
        for name, size in (("start", N_JOINTS), ("end", N_JOINTS), ("wrist_offset", 3), ("Q_weights", N_JOINTS)):
            v = tuple(float(x) for x in np.asarray(getattr(self, name), dtype=float).reshape(-1))
            if len(v) != size:
                raise ValueError(f"{name} needs {size} values")
            object.__setattr__(self, name, v)
        L = np.asarray(self.wrist_map, dtype=float)
        if L.shape != (3, 3):
            raise ValueError("wrist_map must be 3x3")
        object.__setattr__(self, "wrist_map", tuple(tuple(r) for r in L.tolist()))


def expand_apex(action: ApexAction, profile: TaskProfile, arm: Optional[ArmModel] = None) -> np.ndarray:
    """Six-joint apex configuration: the action followed by a linear wrist map."""
    a = action.as_array()
    wrist = np.asarray(profile.wrist_map) @ a + np.asarray(profile.wrist_offset)
    q = np.r_[a, wrist]
    if arm is not None and (np.any(q < arm.q_min) or np.any(q > arm.q_max)):
        raise ApexLimitError(f"apex configuration {q} outside joint limits")
    return q


@dataclass(frozen=True)
class TrajectoryRequest:
    start: np.ndarray
    end: np.ndarray
    apex: np.ndarray  # full 6-joint apex configuration
    h: float
    H_init: int = 250
    H_min: int = 2
    Q_weights: np.ndarray = field(default_factory=lambda: np.ones(N_JOINTS))
    arm: ArmModel = field(default_factory=load_arm)

    def __post_init__(self):
        for name in ("start", "end", "apex", "Q_weights"):
            v = np.asarray(getattr(self, name), dtype=float).reshape(-1)
            if v.size != N_JOINTS:
                raise ValueError(f"{name} needs {N_JOINTS} values")
            object.__setattr__(self, name, v)
        k = self.h / self.arm.control_period
        if self.h <= 0 or abs(k - round(k)) > 1e-9 or round(k) < 1:
            raise ValueError(f"h={self.h} is not a positive multiple of the control period")
        if not self.H_init >= self.H_min >= 2:
            raise ValueError("need H_init >= H_min >= 2")
        if np.any(self.Q_weights <= 0):
            raise ValueError("Q weights must be positive")


@dataclass
class Trajectory:
    h: float
    q: np.ndarray  # (H+1, 6)
    v: np.ndarray
    a: np.ndarray
    objective: float = 0.0
    qp_solves: int = 0
    # verdict at H-1 from the horizon search: the blocking joint and its
    # infeasibility certificate (None when H = H_min or H-1 was never solved)
    below_joint: Optional[int] = None
    below_certificate: Optional[np.ndarray] = None
    findings: List[str] = field(default_factory=list)

    @property
    def H(self) -> int:
        return self.q.shape[0] - 1

    @property
    def duration(self) -> float:
        return self.H * self.h

    @property
    def apex_index(self) -> int:
        return self.H // 2

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.H + 1) * self.h

    def samples(self):
        return list(zip(self.q, self.v, self.a))

    def jerk_objective(self, Q_weights=None) -> float:
        Qw = np.ones(self.q.shape[1]) if Q_weights is None else np.asarray(Q_weights)
        da = np.diff(self.a, axis=0)
        return float(np.sum(da * da * Qw) / (2 * self.h))

    def write_csv(self, path) -> Path:
        path = Path(path)
        n = self.q.shape[1]
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(
                ["t_index", "time_s"]
                + [f"q{i + 1}" for i in range(n)]
                + [f"v{i + 1}" for i in range(n)]
                + [f"a{i + 1}" for i in range(n)]
            )
            for t in range(self.H + 1):
                w.writerow([t, repr(t * self.h)] + [repr(float(x)) for x in np.r_[self.q[t], self.v[t], self.a[t]]])
        return path

    @classmethod
    def read_csv(cls, path) -> "Trajectory":
        with Path(path).open() as fh:
            rows = list(csv.reader(fh))
        body = np.array(rows[1:], dtype=float)
        n = (body.shape[1] - 2) // 3
        h = float(body[1, 1] - body[0, 1]) if len(body) > 1 else 0.0
        return cls(h, body[:, 2 : 2 + n], body[:, 2 + n : 2 + 2 * n], body[:, 2 + 2 * n :])

    @classmethod
    def constant(cls, q, H: int, h: float) -> "Trajectory":
        q = np.asarray(q, dtype=float)
        z = np.zeros((H + 1, q.size))
        return cls(h, np.tile(q, (H + 1, 1)), z.copy(), z.copy())


# ------------------------------------------------------------------ QP assembly

def _joint_slice(request: TrajectoryRequest, joints: Optional[Sequence[int]]):
    return np.arange(N_JOINTS) if joints is None else np.asarray(joints, dtype=int)


def assemble_qp(request: TrajectoryRequest, H: int, joints: Optional[Sequence[int]] = None) -> QpProblem:
    """The jerk-minimising trajectory QP at horizon ``H``.

    The decision vector stacks ``(q_t, v_t, a_t)`` for ``t = 0..H``; each
    block holds one entry per selected joint (all six by default).
    """
    if H < request.H_min:
        raise ValueError(f"H={H} below H_min={request.H_min}")
    J = _joint_slice(request, joints)
    d = J.size
    arm = request.arm
    h = request.h
    n = 3 * d * (H + 1)
    jd = np.arange(d)

    def idx(t, kind):
        return np.asarray(t)[..., None] * 3 * d + kind * d + jd

    rows, cols, vals = [], [], []
    lo, hi = [], []
    r = 0

    def add(entries, l, u):
        # entries: list of (col_index_array (k,d), coefficient)
        nonlocal r
        k = entries[0][0].shape[0]
        rid = r + np.arange(k * d).reshape(k, d)
        for c, coef in entries:
            rows.append(rid.ravel())
            cols.append(c.ravel())
            vals.append(np.broadcast_to(np.asarray(coef, dtype=float), c.shape).ravel())
        lo.append(np.broadcast_to(l, (k, d)).ravel())
        hi.append(np.broadcast_to(u, (k, d)).ravel())
        r += k * d

    mid = H // 2
    one = np.array([0])
    add([(idx(one, 0), 1.0)], request.start[J], request.start[J])
    add([(idx(one + mid, 0), 1.0)], request.apex[J], request.apex[J])
    add([(idx(one + H, 0), 1.0)], request.end[J], request.end[J])
    add([(idx(one, 1), 1.0)], 0.0, 0.0)
    add([(idx(one + H, 1), 1.0)], 0.0, 0.0)
    t = np.arange(H)
    add([(idx(t + 1, 0), 1.0), (idx(t, 0), -1.0), (idx(t, 1), -h), (idx(t, 2), -0.5 * h * h)], 0.0, 0.0)
    add([(idx(t + 1, 1), 1.0), (idx(t, 1), -1.0), (idx(t, 2), -h)], 0.0, 0.0)
    inner = np.arange(1, H)
    if inner.size:
        add([(idx(inner, 0), 1.0)], arm.q_min[J], arm.q_max[J])
        add([(idx(inner, 1), 1.0)], arm.v_min[J], arm.v_max[J])
    add([(idx(t, 2), 1.0)], arm.a_min[J], arm.a_max[J])
    add([(idx(t + 1, 2), 1.0), (idx(t, 2), -1.0)], h * arm.j_min[J], h * arm.j_max[J])

    A = sp.csc_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(r, n))

    # objective 1/(2h) sum_t (a_{t+1}-a_t)' Q (a_{t+1}-a_t)
    Dm = sp.diags([-np.ones(H), np.ones(H)], [0, 1], shape=(H, H + 1))
    DtD = (Dm.T @ Dm).tocoo()
    Qw = request.Q_weights[J]
    pr = idx(DtD.row, 2)
    pc = idx(DtD.col, 2)
    pv = DtD.data[:, None] * Qw[None, :] / h
    P = sp.csc_matrix((pv.ravel(), (pr.ravel(), pc.ravel())), shape=(n, n))
    return QpProblem(P, np.zeros(n), A, np.concatenate(lo), np.concatenate(hi))


def unpack(x: np.ndarray, H: int, d: int = N_JOINTS):
    """Split a decision vector into (q, v, a) arrays of shape (H+1, d)."""
    X = np.asarray(x).reshape(H + 1, 3, d)
    return X[:, 0, :].copy(), X[:, 1, :].copy(), X[:, 2, :].copy()


def pack(q, v, a) -> np.ndarray:
    return np.stack([q, v, a], axis=1).reshape(-1)


@lru_cache(maxsize=64)
def _condensed_maps(H: int, h: float):
    """Maps from the accelerations ``a_0..a_H`` of one joint to q and v.

    With ``v_{t+1} = v_t + h a_t`` and ``q_{t+1} = q_t + h v_t + h^2 a_t / 2``
    and ``v_0 = 0``, position and velocity are ``q_t = q_0 + Lq[t] @ a`` and
    ``v_t = Lv[t] @ a``.
    """
    t = np.arange(H + 1)[:, None]
    s = np.arange(H + 1)[None, :]
    past = s < t
    Lv = h * past
    Lq = h * h * np.where(past, t - s - 0.5, 0.0)
    Lv.setflags(write=False)
    Lq.setflags(write=False)
    return Lq, Lv


@lru_cache(maxsize=64)
def _joint_block(H: int, h: float):
    """Constraint matrix and cost of the single-joint trajectory QP."""
    Lq, Lv = _condensed_maps(H, h)
    mid = H // 2
    Dm = sp.diags([-np.ones(H), np.ones(H)], [0, 1], shape=(H, H + 1), format="csr")
    A = sp.vstack(
        [
            sp.csr_matrix(np.vstack([Lq[mid], Lq[H], Lv[H]])),
            sp.csr_matrix(Lq[1:H]),
            sp.csr_matrix(Lv[1:H]),
            sp.eye(H, H + 1, format="csr"),
            Dm,
        ],
        format="csc",
    )
    P = (Dm.T @ Dm).tocsc() / h
    return A, P


def assemble_condensed(request: TrajectoryRequest, H: int, joints: Optional[Sequence[int]] = None) -> QpProblem:
    """The trajectory QP of :func:`assemble_qp` with the dynamics eliminated.

    The decision vector holds the accelerations ``a_0..a_H`` of each selected
    joint (all six by default), joint after joint. Positions and velocities
    follow from the dynamics with ``q_0 = start`` and ``v_0 = 0`` (see
    :func:`unpack`), which leaves the apex, end and ``v_H = 0`` equalities,
    the position and velocity boxes at ``t = 1..H-1``, the acceleration box
    at ``t = 0..H-1`` and the jerk rows ``h j_min <= a_{t+1} - a_t <= h j_max``
    as constraints. Its feasible set and objective are those of
    :func:`assemble_qp` under that substitution, but with no long chain of
    equality rows it is far better conditioned for the splitting solver.
    """
    if H < request.H_min:
        raise ValueError(f"H={H} below H_min={request.H_min}")
    J = _joint_slice(request, joints)
    arm = request.arm
    h = request.h
    A1, P1 = _joint_block(H, h)
    lo, hi = [], []
    for j in J:
        q0 = request.start[j]
        eq = np.array([request.apex[j] - q0, request.end[j] - q0, 0.0])
        lo.append(
            np.concatenate(
                [
                    eq,
                    np.full(H - 1, arm.q_min[j] - q0),
                    np.full(H - 1, arm.v_min[j]),
                    np.full(H, arm.a_min[j]),
                    np.full(H, h * arm.j_min[j]),
                ]
            )
        )
        hi.append(
            np.concatenate(
                [
                    eq,
                    np.full(H - 1, arm.q_max[j] - q0),
                    np.full(H - 1, arm.v_max[j]),
                    np.full(H, arm.a_max[j]),
                    np.full(H, h * arm.j_max[j]),
                ]
            )
        )
    I = sp.eye(J.size, format="csc")
    A = sp.kron(I, A1, format="csc")
    P = sp.kron(sp.diags(request.Q_weights[J]), P1, format="csc")
    return QpProblem(P, np.zeros(P.shape[0]), A, np.concatenate(lo), np.concatenate(hi))


def expand_condensed(x: np.ndarray, H: int, start: np.ndarray, h: float):
    """Recover (q, v, a) arrays of shape (H+1, d) from stacked accelerations."""
    start = np.atleast_1d(np.asarray(start, dtype=float))
    d = start.size
    a = np.asarray(x, dtype=float).reshape(d, H + 1).T
    Lq, Lv = _condensed_maps(H, h)
    return start + Lq @ a, Lv @ a, a.copy()


def pack_condensed(a: np.ndarray) -> np.ndarray:
    """Stack an (H+1, d) acceleration array into a condensed decision vector."""
    return np.asarray(a, dtype=float).T.reshape(-1)


# ------------------------------------------------------------- horizon search

def _resample_warm(sol: QpSolution, H_from: int, H_to: int) -> np.ndarray:
    """Time-rescale a condensed single-joint solution to another horizon."""
    s_from = np.linspace(0.0, 1.0, H_from + 1)
    s_to = np.linspace(0.0, 1.0, H_to + 1)
    k = H_from / H_to
    return k * k * np.interp(s_to, s_from, sol.x)


class HorizonSearch:
    """Per-joint feasibility verdicts for one request, memoised by horizon.

    The trajectory QP is block diagonal over joints, so a horizon is feasible
    exactly when every single-joint QP is. Joints are tried in decreasing
    order of excursion, which usually puts the binding joint first.

    With ``monotone=True`` a joint already solved at a shorter horizon counts
    as feasible, and one already proven infeasible at a longer horizon counts
    as infeasible, without a new solve.
    """

    def __init__(self, request: TrajectoryRequest, settings: Optional[SolverSettings] = None, monotone: bool = False):
        self.request = request
        self.settings = settings or SolverSettings()
        self.monotone = monotone
        self.cache: Dict[Tuple[int, int], QpSolution] = {}
        self.qp_solves = 0
        self.findings: List[str] = []
        exc = np.abs(request.apex - request.start) + np.abs(request.end - request.apex)
        self.order = [int(j) for j in np.argsort(-exc, kind="stable")]
        arm = request.arm
        # joints that never move: a = 0 is feasible and has zero cost at every H
        self.still = {
            j
            for j in range(N_JOINTS)
            if request.start[j] == request.apex[j] == request.end[j] and arm.q_min[j] <= request.start[j] <= arm.q_max[j]
        }

    def _warm(self, H: int, j: int) -> Optional[np.ndarray]:
        ks = [k for (k, jj), s in self.cache.items() if jj == j and s.status is Status.SOLVED and s.iterations > 0]
        if not ks:
            return None
        ref = min(ks, key=lambda k: (abs(k - H), k))
        return _resample_warm(self.cache[ref, j], ref, H)

    def joint_solution(self, H: int, j: int) -> QpSolution:
        key = (H, j)
        if key in self.cache:
            return self.cache[key]
        if j in self.still:
            m = 3 + 2 * (H - 1) + 2 * H
            sol = QpSolution(np.zeros(H + 1), np.zeros(m), Status.SOLVED, 0, 0.0, 0.0, objective=0.0)
            self.cache[key] = sol
            return sol
        prob = assemble_condensed(self.request, H, joints=[j])
        warm = self._warm(H, j)
        start = (warm, None) if warm is not None else None
        sol = solve(prob, self.settings, warm=start)
        self.qp_solves += 1
        if sol.status is Status.MAX_ITERATIONS:
            retry = replace(self.settings, max_iter=4 * self.settings.max_iter)
            sol = solve(prob, retry, warm=start)
            self.qp_solves += 1
            if sol.status is Status.MAX_ITERATIONS:
                msg = f"joint {j} at H={H}: no verdict after {retry.max_iter} iterations, treated as infeasible"
                log.warning(msg)
                self.findings.append(msg)
        self.cache[key] = sol
        return sol

    def _inferred(self, H: int, j: int) -> Optional[bool]:
        if not self.monotone:
            return None
        for (k, jj), s in self.cache.items():
            if jj != j:
                continue
            ok = s.status is Status.SOLVED
            if ok and k <= H:
                return True
            if not ok and k >= H:
                return False
        return None

    def blocking_joint(self, H: int) -> Optional[int]:
        """First joint that is not feasible at ``H``, or None if all are."""
        for j in self.order:
            ok = self._inferred(H, j)
            if ok is None:
                ok = self.joint_solution(H, j).status is Status.SOLVED
            if not ok:
                # try this joint first at the next horizon
                self.order.remove(j)
                self.order.insert(0, j)
                return j
        return None

    def feasible(self, H: int) -> bool:
        return self.blocking_joint(H) is None

    def certificate(self, H: int) -> Tuple[Optional[int], Optional[np.ndarray]]:
        """A joint proven infeasible at ``H`` by an actual solve, and its certificate."""
        for j in self.order:
            s = self.cache.get((H, j))
            if s is not None and s.status is Status.PRIMAL_INFEASIBLE:
                return j, s.certificate
        return None, None

    def trajectory(self, H: int) -> Trajectory:
        req = self.request
        sols = [self.joint_solution(H, j) for j in range(N_JOINTS)]
        if any(s.status is not Status.SOLVED for s in sols):
            raise ValueError(f"H={H} is not feasible")
        x = np.concatenate([s.x for s in sols])
        q, v, a = expand_condensed(x, H, req.start, req.h)
        traj = Trajectory(req.h, q, v, a, qp_solves=self.qp_solves)
        traj.objective = traj.jerk_objective(req.Q_weights)
        return traj


def _bracket(hs: HorizonSearch, request: TrajectoryRequest, hint: Optional[int]) -> Tuple[int, int]:
    """Infeasible/feasible horizon pair around the boundary, galloping from ``hint``."""
    lo, hi = request.H_min, request.H_init
    if hint is None or not lo < hint < hi:
        return lo, hi
    step = 1
    if hs.feasible(hint):
        hi = hint
        while hi - lo > 1:
            H = max(hi - step, lo + 1)
            if not hs.feasible(H):
                return H, hi
            hi, step = H, 2 * step
    else:
        lo = hint
        while hi - lo > 1:
            H = min(lo + step, hi - 1)
            if hs.feasible(H):
                return lo, H
            lo, step = H, 2 * step
    return lo, hi


def solve_horizon(
    request: TrajectoryRequest,
    settings: Optional[SolverSettings] = None,
    search: str = LINEAR,
    hint: Optional[int] = None,
) -> Trajectory:
    """Shortest feasible minimum-jerk trajectory for ``request``.

    ``search="linear"`` starts at ``H_init`` and decrements H by one until the
    QP becomes infeasible. ``search="bisect"`` bisects on ``[H_min, H_init]``,
    which returns the same horizon whenever feasibility is monotone in H.
    In bisect mode ``hint`` (for example the horizon of a nearby apex) seeds
    a galloping search that brackets the boundary before bisecting.

    Raises
    ------
    NoFeasibleTrajectoryError
        If the QP is infeasible at ``H_init``.
    """
    if search not in (LINEAR, BISECT):
        raise ValueError(f"unknown search mode {search!r}")
    hs = HorizonSearch(request, settings, monotone=search == BISECT)
    if not hs.feasible(request.H_init):
        _, cert = hs.certificate(request.H_init)
        raise NoFeasibleTrajectoryError(f"no feasible trajectory at H_init={request.H_init}", cert, request.H_init)
    best = request.H_init
    if search == LINEAR:
        H = request.H_init - 1
        while H >= request.H_min and hs.feasible(H):
            best = H
            H -= 1
    elif hs.feasible(request.H_min):
        best = request.H_min
    else:
        lo, hi = _bracket(hs, request, hint)  # lo infeasible, hi feasible
        while hi - lo > 1:
            mid = (lo + hi) // 2
            if hs.feasible(mid):
                hi = mid
            else:
                lo = mid
        best = hi
    traj = hs.trajectory(best)
    traj.qp_solves = hs.qp_solves
    traj.findings = list(hs.findings)
    if best > request.H_min:
        traj.below_joint, traj.below_certificate = hs.certificate(best - 1)
    return traj


# -------------------------------------------------------------- task profiles

WRIST = (-np.pi / 2, -np.pi / 2, 0.0)
# down and left of the arm, and its mirror image about the sagittal plane
START = (1.0, -0.5, 1.6) + WRIST
END = (-1.0, -0.5, 1.6) + WRIST

# The task profiles bisect on H: a linear scan costs ~8 s per trajectory,
# bisection ~0.3 s, and monotone_check has found no counterexample.
PROFILES: Dict[str, TaskProfile] = {
    name: TaskProfile(name, START, END, wrist_offset=WRIST, search=BISECT) for name in ("vaulting", "knocking", "weaving")
}


def register_profile(profile: TaskProfile) -> None:
    PROFILES[profile.name] = profile


def get_profile(task_kind) -> TaskProfile:
    name = getattr(task_kind, "value", task_kind)
    try:
        return PROFILES[name]
    except KeyError:
        raise KeyError(f"no task profile registered for {name!r}") from None


def make_request(task_kind, action: ApexAction, arm: Optional[ArmModel] = None) -> TrajectoryRequest:
    profile = get_profile(task_kind)
    arm = arm or load_arm()
    return TrajectoryRequest(
        start=np.array(profile.start),
        end=np.array(profile.end),
        apex=expand_apex(action, profile, arm),
        h=profile.h_multiple * arm.control_period,
        H_init=profile.H_init,
        H_min=profile.H_min,
        Q_weights=np.array(profile.Q_weights),
        arm=arm,
    )


@lru_cache(maxsize=4096)
def _cached(name: str, apex: Tuple[float, float, float]) -> Trajectory:
    profile = get_profile(name)
    return solve_horizon(make_request(name, ApexAction(apex)), search=profile.search)


def trajectory_function(task_kind, action: ApexAction, arm: Optional[ArmModel] = None) -> Trajectory:
    """Shortest minimum-jerk trajectory for ``task_kind`` through ``action``.

    Results for the default arm are memoised, so callers get a copy.
    """
    name = getattr(task_kind, "value", task_kind)
    if arm is None:
        traj = _cached(name, action.apex_joints)
        return replace(traj, q=traj.q.copy(), v=traj.v.copy(), a=traj.a.copy(), findings=list(traj.findings))
    profile = get_profile(name)
    return solve_horizon(make_request(name, action, arm), search=profile.search)


def monotone_check(requests: Sequence[TrajectoryRequest], settings: Optional[SolverSettings] = None) -> List[str]:
    """Scan every horizon of each request and report non-monotone feasibility.

    Returns one finding per request where some H is feasible but H+1 is not.
    """
    findings = []
    for i, req in enumerate(requests):
        hs = HorizonSearch(req, settings)
        flags = [hs.feasible(H) for H in range(req.H_min, req.H_init + 1)]
        for k in range(len(flags) - 1):
            if flags[k] and not flags[k + 1]:
                msg = f"request {i}: H={req.H_min + k} feasible but H={req.H_min + k + 1} infeasible"
                log.warning(msg)
                findings.append(msg)
                break
    return findings
