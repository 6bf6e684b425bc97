from __future__ import annotations

import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cablewhip.arm import load_arm, within_limits
from cablewhip.minjerk import (
    BISECT,
    LINEAR,
    WRIST,
    ApexAction,
    ApexLimitError,
    HorizonSearch,
    NoFeasibleTrajectoryError,
    TaskProfile,
    Trajectory,
    TrajectoryRequest,
    assemble_condensed,
    assemble_qp,
    expand_apex,
    get_profile,
    make_request,
    monotone_check,
    pack,
    solve_horizon,
    trajectory_function,
)
from cablewhip.qpcore import Status, solve
from oracles import naive_jerk_objective, quintic

ARM = load_arm()
H_STEP = ARM.control_period


def generous_arm(scale=100.0):
    return dataclasses.replace(
        ARM,
        v_min=ARM.v_min * scale,
        v_max=ARM.v_max * scale,
        a_min=ARM.a_min * scale,
        a_max=ARM.a_max * scale,
        j_min=ARM.j_min * scale,
        j_max=ARM.j_max * scale,
    )


def one_dof_request(arm, H_init=50, goal=1.0):
    start = np.zeros(6)
    end = np.zeros(6)
    end[0] = goal
    apex = np.zeros(6)
    apex[0] = goal / 2
    return TrajectoryRequest(start, end, apex, H_STEP, H_init=H_init, arm=arm)


def check_equalities(traj, req, tol=1e-6):
    assert np.abs(traj.q[0] - req.start).max() <= tol
    assert np.abs(traj.q[-1] - req.end).max() <= tol
    assert np.abs(traj.q[traj.apex_index] - req.apex).max() <= tol
    assert np.abs(traj.v[0]).max() <= tol
    assert np.abs(traj.v[-1]).max() <= tol


def test_expand_apex_zero_map():
    prof = TaskProfile("t", np.zeros(6), np.zeros(6))
    assert np.allclose(expand_apex(ApexAction((0.1, -1.2, 1.0)), prof), [0.1, -1.2, 1.0, 0, 0, 0])


def test_expand_apex_constant_wrist():
    prof = TaskProfile("t", np.zeros(6), np.zeros(6), wrist_offset=WRIST)
    for a in [(0.0, -1.0, 1.0), (0.5, -2.0, 0.3)]:
        assert np.allclose(expand_apex(ApexAction(a), prof)[3:], WRIST)


def test_expand_apex_linear_row():
    L = ((0.5, 0.0, 0.0), (0.0, 0.0, 0.0), (0.0, 0.0, 0.0))
    prof = TaskProfile("t", np.zeros(6), np.zeros(6), wrist_map=L)
    assert expand_apex(ApexAction((0.2, -1.0, 1.0)), prof)[3] == pytest.approx(0.1)


def test_expand_apex_limit_error():
    prof = TaskProfile("t", np.zeros(6), np.zeros(6))
    with pytest.raises(ApexLimitError):
        expand_apex(ApexAction((0.0, 0.5, 0.0)), prof, ARM)  # shoulder above its limit of 0


def test_request_validation():
    z = np.zeros(6)
    with pytest.raises(ValueError):
        TrajectoryRequest(z, z, z, 0.005)
    with pytest.raises(ValueError):
        TrajectoryRequest(z, z, z, H_STEP, H_init=10, H_min=20)
    with pytest.raises(ValueError):
        TrajectoryRequest(z, z, z, H_STEP, Q_weights=np.r_[1, 1, 1, 1, 1, 0.0])
    TrajectoryRequest(z, z, z, 2 * H_STEP)


def test_h2_decision_vector_size():
    z = np.zeros(6)
    req = TrajectoryRequest(z, z, z, H_STEP)
    prob = assemble_qp(req, 2)
    assert prob.n == 3 * 6 * 3 == 54
    # the apex row pins q at t = 1 (decision index 18 onward)
    A = prob.A.toarray()
    apex_rows = [r for r in range(A.shape[0]) if A[r, 18] == 1 and np.count_nonzero(A[r]) == 1]
    assert apex_rows


def test_constant_trajectory_feasible_with_zero_objective():
    q0 = np.r_[0.2, -1.0, 1.0, WRIST]
    req = TrajectoryRequest(q0, q0, q0, H_STEP)
    for H in (2, 5, 12):
        prob = assemble_qp(req, H)
        traj = Trajectory.constant(q0, H, H_STEP)
        x = pack(traj.q, traj.v, traj.a)
        Ax = prob.A @ x
        assert np.all(Ax >= prob.l - 1e-12) and np.all(Ax <= prob.u + 1e-12)
        assert prob.objective(x) == 0.0


def test_objective_matches_naive_loop():
    rng = np.random.default_rng(0)
    H = 9
    Qw = rng.uniform(0.5, 2.0, 6)
    z = np.zeros(6)
    req = TrajectoryRequest(z, z, z, H_STEP, Q_weights=Qw)
    q, v, a = (rng.standard_normal((H + 1, 6)) for _ in range(3))
    prob = assemble_qp(req, H)
    assert prob.objective(pack(q, v, a)) == pytest.approx(naive_jerk_objective(a, H_STEP, Qw), rel=1e-10)


def test_condensed_form_matches_stacked_objective():
    req = one_dof_request(generous_arm(), H_init=30)
    sol = solve(assemble_condensed(req, 30, joints=[0]))
    assert sol.status is Status.SOLVED
    hs = HorizonSearch(req)
    traj = hs.trajectory(30)
    prob = assemble_qp(req, 30)
    x = pack(traj.q, traj.v, traj.a)
    Ax = prob.A @ x
    assert np.all(Ax >= prob.l - 1e-6) and np.all(Ax <= prob.u + 1e-6)
    assert prob.objective(x) == pytest.approx(traj.objective, rel=1e-9)


def test_constant_request_returns_h_min():
    q0 = np.r_[0.2, -1.0, 1.0, WRIST]
    req = TrajectoryRequest(q0, q0, q0, H_STEP, H_init=40)
    traj = solve_horizon(req)
    assert traj.H == req.H_min
    assert traj.objective == 0.0
    assert np.allclose(traj.q, q0)


def free_end_acceleration_profile(s):
    """Minimiser of the integrated squared jerk with q, q' fixed at both ends
    and q'' free; the natural boundary condition makes the jerk vanish there."""
    return 2.5 * s**2 - 2.5 * s**4 + s**5


def test_one_dof_matches_continuous_optimum():
    req = one_dof_request(generous_arm(), H_init=50)
    traj = HorizonSearch(req).trajectory(50)
    s = np.linspace(0.0, 1.0, 51)
    assert np.abs(traj.q[:, 0] - free_end_acceleration_profile(s)).max() < 1e-6
    assert np.abs(traj.q[:, 1:]).max() == 0.0
    # the rest-to-rest quintic also passes through the apex, but it pins the
    # end accelerations to zero, which this QP does not
    assert traj.q[25, 0] == pytest.approx(quintic(0.5), abs=1e-9)
    assert abs(traj.a[0, 0]) > 1.0


def test_apex_velocity_is_left_free():
    req = make_request("vaulting", ApexAction((0.0, -1.6, 0.6)))
    traj = solve_horizon(req, search=BISECT)
    assert np.abs(traj.v[traj.apex_index]).max() > 0.1


def exhaustive_h_star(req):
    hs = HorizonSearch(req)
    feas = [H for H in range(req.H_min, req.H_init + 1) if hs.feasible(H)]
    return min(feas)


def test_halving_velocity_limit_increases_horizon():
    arm = ARM
    slow = dataclasses.replace(ARM, v_min=ARM.v_min / 2, v_max=ARM.v_max / 2)
    fast_req = one_dof_request(arm, H_init=80, goal=0.8)
    slow_req = one_dof_request(slow, H_init=80, goal=0.8)
    h_fast, h_slow = exhaustive_h_star(fast_req), exhaustive_h_star(slow_req)
    assert h_slow > h_fast
    assert solve_horizon(fast_req).H == h_fast
    assert solve_horizon(slow_req).H == h_slow
    assert solve_horizon(slow_req, search=BISECT).H == h_slow


def test_linear_and_bisect_agree_on_task_request():
    req = make_request("vaulting", ApexAction((0.1, -1.4, 0.8)))
    req = dataclasses.replace(req, H_init=110)
    a = solve_horizon(req, search=LINEAR)
    b = solve_horizon(req, search=BISECT)
    assert a.H == b.H
    assert np.allclose(a.q, b.q, atol=1e-5)


def test_minimality_certificate():
    req = make_request("vaulting", ApexAction((-0.2, -1.8, 0.4)))
    traj = solve_horizon(req, search=BISECT)
    assert traj.H > req.H_min
    assert traj.below_joint is not None and traj.below_certificate is not None
    prob = assemble_condensed(req, traj.H - 1, joints=[traj.below_joint])
    assert solve(prob).status is Status.PRIMAL_INFEASIBLE
    assert within_limits(ARM, traj) == []
    check_equalities(traj, req)


def test_infeasible_at_h_init():
    req = one_dof_request(ARM, H_init=5, goal=1.0)
    with pytest.raises(NoFeasibleTrajectoryError) as err:
        solve_horizon(req)
    assert err.value.horizon == 5
    assert err.value.certificate is not None


def test_unknown_search_mode():
    with pytest.raises(ValueError):
        solve_horizon(one_dof_request(ARM, H_init=60), search="golden")


def test_profiles_are_mirror_symmetric():
    for name in ("vaulting", "knocking", "weaving"):
        prof = get_profile(name)
        start, end = np.array(prof.start), np.array(prof.end)
        assert end[0] == -start[0]
        assert np.array_equal(start[1:], end[1:])
    with pytest.raises(KeyError):
        get_profile("juggling")


def test_trajectory_function_deterministic_and_copied():
    act = ApexAction((0.0, -1.5, 0.5))
    a = trajectory_function("vaulting", act)
    b = trajectory_function("vaulting", act)
    assert np.array_equal(a.q, b.q) and np.array_equal(a.v, b.v)
    a.q[:] = 0.0
    c = trajectory_function("vaulting", act)
    assert np.array_equal(c.q, b.q)


def test_apex_change_moves_only_apex_sample():
    act = ApexAction((0.0, -1.5, 0.5))
    moved = ApexAction((0.0, -1.45, 0.5))
    a = trajectory_function("vaulting", act)
    b = trajectory_function("vaulting", moved)
    prof = get_profile("vaulting")
    assert np.allclose(b.q[b.apex_index], expand_apex(moved, prof), atol=1e-6)
    assert np.allclose(a.q[0], b.q[0], atol=1e-6) and np.allclose(a.q[-1], b.q[-1], atol=1e-6)
    assert np.abs(b.q[b.apex_index] - a.q[a.apex_index] - np.r_[0, 0.05, 0, 0, 0, 0]).max() < 1e-6


def test_csv_round_trip(tmp_path):
    traj = trajectory_function("vaulting", ApexAction((0.0, -1.5, 0.5)))
    path = traj.write_csv(tmp_path / "traj.csv")
    header = path.read_text().splitlines()[0].split(",")
    assert header[:3] == ["t_index", "time_s", "q1"] and header[-1] == "a6"
    back = Trajectory.read_csv(path)
    assert np.array_equal(back.q, traj.q) and np.array_equal(back.a, traj.a)
    assert back.h == pytest.approx(traj.h)


def small_requests(n, seed=0):
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        start = np.r_[rng.uniform(-0.3, 0.3), -1.0, 1.0, WRIST]
        end = np.r_[rng.uniform(-0.3, 0.3), -1.0, 1.0, WRIST]
        apex = np.r_[rng.uniform(-0.3, 0.3), rng.uniform(-1.3, -0.7), rng.uniform(0.7, 1.3), WRIST]
        out.append(TrajectoryRequest(start, end, apex, H_STEP, H_init=40, arm=ARM))
    return out


@pytest.mark.slow
def test_monotone_feasibility_on_random_requests():
    assert monotone_check(small_requests(50)) == []


@settings(max_examples=8, deadline=None)
@given(st.floats(-0.6, 0.6), st.floats(-2.4, -0.6), st.floats(0.0, 1.8))
def test_task_trajectories_respect_limits(q1, q2, q3):
    req = make_request("vaulting", ApexAction((q1, q2, q3)))
    traj = solve_horizon(req, search=BISECT)
    assert within_limits(ARM, traj) == []
    check_equalities(traj, req)
    assert traj.objective >= 0.0
    # defining relations of the discretisation hold exactly
    h = traj.h
    assert np.allclose(traj.q[1:], traj.q[:-1] + h * traj.v[:-1] + 0.5 * h * h * traj.a[:-1], atol=1e-9)
    assert np.allclose(traj.v[1:], traj.v[:-1] + h * traj.a[:-1], atol=1e-9)
