import numpy as np
import pytest

from diffcontact import so3
from diffcontact.backends import BshBackend
from diffcontact.friction import FrictionParams
from diffcontact.geometry import (
    Pose,
    SystemState,
    TriMeshBody,
    box_inertia,
    make_box,
    make_ground_quad,
    make_icosphere,
    min_pair_distance,
    sphere_inertia,
)
from diffcontact.stepper import (
    PdControl,
    StepProblem,
    fd_step_jacobian,
    step,
    step_jacobians,
)

GRAVITY = np.array([0.0, 0.0, -9.8])


def _ball_and_ground(radius=0.2, subdiv=0):
    verts, faces = make_icosphere(radius, subdiv)
    ball = TriMeshBody("ball", verts, faces, mass=0.2, inertia=sphere_inertia(0.2, radius))
    gv, gf = make_ground_quad(2.0)
    ground = TriMeshBody("ground", gv, gf, static=True)
    return [ball, ground]


def test_free_body_constant_velocity():
    bodies = _ball_and_ground()[:1]
    backend = BshBackend(bodies)
    p_t = [Pose(np.array([0.0, 0, 0]), np.eye(3))]
    p_m = [Pose(np.array([-0.05, 0.01, 0.02]), np.eye(3))]
    prob = StepProblem(bodies, p_t, p_m, 0.04, 1e-7, np.zeros(3), backend)
    res = step(prob)
    assert np.allclose(
        res.poses_next[0].translation, 2 * p_t[0].translation - p_m[0].translation
    )


def test_free_spin_constant_increment():
    bodies = _ball_and_ground()[:1]
    backend = BshBackend(bodies)
    w = np.array([0.2, -0.1, 0.3])
    r_t = so3.exp_so3(w)
    p_t = [Pose(np.zeros(3), r_t)]
    p_m = [Pose(np.zeros(3), np.eye(3))]
    prob = StepProblem(bodies, p_t, p_m, 0.04, 1e-7, np.zeros(3), backend)
    res = step(prob)
    expect = r_t @ so3.exp_so3(so3.log_so3(r_t))
    assert np.allclose(res.poses_next[0].rotation, expect, atol=1e-10)


def test_no_contact_jacobians_are_trivial():
    bodies = _ball_and_ground()[:1]
    backend = BshBackend(bodies)
    p_t = [Pose(np.array([0.0, 0, 0]), np.eye(3))]
    p_m = [Pose(np.array([-0.05, 0.01, 0.0]), np.eye(3))]
    prob = StepProblem(bodies, p_t, p_m, 0.04, 1e-7, np.zeros(3), backend)
    res = step(prob)
    jac = step_jacobians(prob, res)
    assert np.abs(jac.wrt_t - 2 * np.eye(6)).max() < 1e-12
    assert np.abs(jac.wrt_tm1 + np.eye(6)).max() < 1e-12


def test_gravity_free_fall():
    bodies = _ball_and_ground()[:1]
    backend = BshBackend(bodies)
    p_t = [Pose(np.array([0.0, 0, 1.0]), np.eye(3))]
    p_m = [Pose(np.array([0.0, 0, 1.0]), np.eye(3))]
    prob = StepProblem(bodies, p_t, p_m, 0.04, 1e-7, GRAVITY, backend)
    res = step(prob)
    assert res.poses_next[0].translation[2] == pytest.approx(1.0 - 9.8 * 0.04**2)


def test_ball_drop_penetration_free_and_monotone():
    bodies = _ball_and_ground()
    backend = BshBackend(bodies)
    poses_t = [Pose(np.array([0.0, 0, 0.35]), np.eye(3)), Pose.identity()]
    poses_m = [p.copy() for p in poses_t]
    min_gap = np.inf
    for _ in range(60):
        prob = StepProblem(bodies, poses_t, poses_m, 0.04, 1e-7, GRAVITY, backend)
        res = step(prob)
        hist = res.lagrangian_history
        resolution = [1e-12 * max(1.0, abs(v)) for v in hist[:-1]]
        assert all(
            hist[i + 1] <= hist[i] + resolution[i] for i in range(len(hist) - 1)
        )
        poses_m, poses_t = poses_t, res.poses_next
        min_gap = min(min_gap, min_pair_distance(SystemState(bodies, poses_t)))
    assert min_gap > 0
    assert poses_t[0].translation[2] < 0.3  # it actually fell


def test_infeasible_warm_start_falls_back():
    # fast downward motion: the constant-velocity prediction penetrates
    bodies = _ball_and_ground()
    backend = BshBackend(bodies)
    poses_t = [Pose(np.array([0.0, 0, 0.21]), np.eye(3)), Pose.identity()]
    poses_m = [Pose(np.array([0.0, 0, 0.29]), np.eye(3)), Pose.identity()]
    prob = StepProblem(bodies, poses_t, poses_m, 0.04, 1e-7, GRAVITY, backend)
    res = step(prob)
    assert min_pair_distance(SystemState(bodies, res.poses_next)) > 0


def test_contact_jacobians_vs_fd():
    bodies = _ball_and_ground()
    backend = BshBackend(bodies)
    # settle the ball first
    poses_t = [Pose(np.array([0.0, 0, 0.25]), np.eye(3)), Pose.identity()]
    poses_m = [p.copy() for p in poses_t]
    for _ in range(40):
        prob = StepProblem(bodies, poses_t, poses_m, 0.04, 1e-7, GRAVITY, backend)
        res = step(prob)
        poses_m, poses_t = poses_t, res.poses_next
    prob = StepProblem(bodies, poses_t, poses_m, 0.04, 1e-7, GRAVITY, backend, tol=1e-11)
    res = step(prob)
    jac = step_jacobians(prob, res)
    for which, analytic in (("t", jac.wrt_t), ("tm1", jac.wrt_tm1)):
        fd = fd_step_jacobian(prob, res, which, h=1e-6)
        rel = np.abs(analytic - fd).max() / np.abs(fd).max()
        assert rel < 1e-4, (which, rel)


def test_contact_jacobians_with_spin_vs_fd():
    bodies = _ball_and_ground()
    backend = BshBackend(bodies)
    w = np.array([0.3, -0.2, 0.5]) * 0.04
    r1 = np.eye(3)
    poses_m = [Pose(np.array([0.05, 0.02, 0.28]), r1), Pose.identity()]
    poses_t = [Pose(np.array([0.06, 0.025, 0.265]), r1 @ so3.exp_so3(w)), Pose.identity()]
    prob = StepProblem(bodies, poses_t, poses_m, 0.04, 1e-6, GRAVITY, backend, tol=1e-11)
    res = step(prob)
    jac = step_jacobians(prob, res)
    for which, analytic in (("t", jac.wrt_t), ("tm1", jac.wrt_tm1)):
        fd = fd_step_jacobian(prob, res, which, h=1e-6)
        rel = np.abs(analytic - fd).max() / np.abs(fd).max()
        assert rel < 1e-4, (which, rel)


def test_control_jacobian_vs_fd():
    bodies = _ball_and_ground()
    backend = BshBackend(bodies)
    poses_t = [Pose(np.array([0.0, 0, 0.25]), np.eye(3)), Pose.identity()]
    poses_m = [p.copy() for p in poses_t]
    controls = [PdControl(kp=20.0, target=np.array([0.1, 0.0, 0.3]), kd=1.0), None]
    prob = StepProblem(
        bodies, poses_t, poses_m, 0.04, 1e-7, GRAVITY, backend,
        controls=controls, tol=1e-11,
    )
    res = step(prob)
    jac = step_jacobians(prob, res)
    fd = fd_step_jacobian(prob, res, "u", h=1e-6)
    rel = np.abs(jac.wrt_controls - fd).max() / np.abs(fd).max()
    assert rel < 1e-4


def test_hessian_symmetric_at_solution():
    from diffcontact.stepper import _assemble

    bodies = _ball_and_ground()
    backend = BshBackend(bodies)
    poses_t = [Pose(np.array([0.0, 0, 0.205]), np.eye(3)), Pose.identity()]
    poses_m = [p.copy() for p in poses_t]
    prob = StepProblem(bodies, poses_t, poses_m, 0.04, 1e-7, GRAVITY, backend)
    res = step(prob)
    _, _, hess, _ = _assemble(prob, res.z, res.h_pred, res.stencil, 2)
    assert np.abs(hess - hess.T).max() <= 1e-9 * max(np.abs(hess).max(), 1.0)


def test_step_determinism():
    bodies = _ball_and_ground()
    outs = []
    for _ in range(2):
        backend = BshBackend(bodies)
        poses_t = [Pose(np.array([0.0, 0, 0.22]), np.eye(3)), Pose.identity()]
        poses_m = [p.copy() for p in poses_t]
        for _ in range(10):
            prob = StepProblem(bodies, poses_t, poses_m, 0.04, 1e-7, GRAVITY, backend)
            res = step(prob)
            poses_m, poses_t = poses_t, res.poses_next
        outs.append(np.concatenate([p.translation for p in poses_t]))
    assert np.array_equal(outs[0], outs[1])


def test_friction_slows_sliding_box():
    vb, fb = make_box((0.2, 0.2, 0.2))
    box = TriMeshBody("box", vb, fb, mass=0.5, inertia=box_inertia(0.5, (0.2,) * 3))
    gv, gf = make_ground_quad(2.0)
    ground = TriMeshBody("ground", gv, gf, static=True)
    bodies = [box, ground]

    def run(lam):
        backend = BshBackend(bodies)
        fric = FrictionParams(lam=lam, epsilon=0.1) if lam > 0 else None
        v0 = np.array([0.8, 0.0, 0.0])
        poses_t = [Pose(np.array([-0.5, 0, 0.102]), np.eye(3)), Pose.identity()]
        poses_m = [Pose(poses_t[0].translation - 0.04 * v0, np.eye(3)), Pose.identity()]
        for _ in range(30):
            prob = StepProblem(
                bodies, poses_t, poses_m, 0.04, 1e-6, GRAVITY, backend, friction=fric
            )
            res = step(prob)
            poses_m, poses_t = poses_t, res.poses_next
        return poses_t[0].translation[0]

    x_free = run(0.0)
    x_fric = run(0.5)
    assert x_fric < x_free - 0.05  # friction dissipates forward motion
