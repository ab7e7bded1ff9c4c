import numpy as np
import pytest

from diffcontact.backends import BshBackend
from diffcontact.bsh import build_bsh
from diffcontact.friction import (
    FrictionParams,
    build_friction_stencil,
    dissipation_terms,
    friction_dissipation,
    local_leaf_potential,
)
from diffcontact.geometry import (
    Pose,
    SystemState,
    TriMeshBody,
    box_inertia,
    make_box,
    make_ground_quad,
)
from diffcontact.oracles import leaf_sphere
from diffcontact.pair_potential import pair_potential

TRI_A = np.array([[0.2, 0.0, 0.3], [-0.1, 0.15, 0.35], [0.0, -0.2, 0.3]])
TRI_B = np.array([[0.25, 0.05, 0.0], [-0.05, 0.2, 0.0], [0.05, -0.15, 0.0]])


def test_params_validate():
    with pytest.raises(ValueError):
        FrictionParams(lam=-0.1)


def _at_center_distance(target):
    ca, _ = leaf_sphere(TRI_A)
    cb, _ = leaf_sphere(TRI_B)
    delta = ca - cb
    r = np.linalg.norm(delta)
    shift = (target / r - 1.0) * delta
    return TRI_A + shift, TRI_B


def test_local_leaf_far_is_identically_zero():
    _, ra = leaf_sphere(TRI_A)
    _, rb = leaf_sphere(TRI_B)
    d2 = 1.1 * (ra + rb)
    ta, tb = _at_center_distance(d2 * 1.5)
    ev = local_leaf_potential(ta, tb, 0.1, order=2)
    assert ev.value == 0.0
    assert np.all(ev.grad == 0.0)
    assert np.all(ev.hess == 0.0)


def test_local_leaf_near_equals_exact():
    _, ra = leaf_sphere(TRI_A)
    _, rb = leaf_sphere(TRI_B)
    d1 = ra + rb
    ta, tb = _at_center_distance(0.9 * d1)
    ev = local_leaf_potential(ta, tb, 0.1, order=0)
    assert ev.value == pytest.approx(pair_potential(ta, tb, order=0).value, rel=1e-14)


def test_local_leaf_band_is_half_at_midpoint():
    _, ra = leaf_sphere(TRI_A)
    _, rb = leaf_sphere(TRI_B)
    d1 = ra + rb
    ta, tb = _at_center_distance(1.05 * d1)  # midpoint of [d1, 1.1 d1]
    ev = local_leaf_potential(ta, tb, 0.1, order=0)
    assert ev.value == pytest.approx(0.5 * pair_potential(ta, tb, order=0).value, rel=1e-12)


def _box_on_ground():
    vb, fb = make_box((0.2, 0.2, 0.2))
    box = TriMeshBody("box", vb, fb, mass=0.5, inertia=box_inertia(0.5, (0.2,) * 3))
    gv, gf = make_ground_quad(1.0)
    ground = TriMeshBody("ground", gv, gf, static=True)
    bodies = [box, ground]
    state = SystemState(bodies, [Pose(np.array([0, 0, 0.101]), np.eye(3)), Pose.identity()])
    trees = [build_bsh(b) for b in bodies]
    return bodies, state, trees


def test_dissipation_zero_at_rest_and_when_separated():
    bodies, state, trees = _box_on_ground()
    params = FrictionParams(lam=0.4, epsilon=0.1, normal_scale=1e-6)
    ev = friction_dissipation(state, state, 0.04, params, trees)
    assert ev.value == 0.0
    assert np.all(ev.grad == 0.0)
    # beyond every leaf pair's d2 (the ground leaf spheres are large, so
    # "separated" here means several body lengths away)
    lifted = SystemState(
        bodies, [Pose(np.array([0, 0, 2.5]), np.eye(3)), Pose.identity()]
    )
    ev = friction_dissipation(lifted, lifted, 0.04, params, trees)
    assert ev.value == 0.0 and ev.support.size == 0


def test_dissipation_gradient_hessian_vs_fd(rng):
    bodies, state, trees = _box_on_ground()
    params = FrictionParams(lam=0.4, epsilon=0.1, normal_scale=1e-6)
    stencil = build_friction_stencil(state, trees, params)
    assert stencil.num_entries > 0
    pos0 = stencil.anchor + np.array([0.004, -0.002, 0.0005])
    val, grad, hess = dissipation_terms(stencil, pos0, 0.04, params, 2)
    assert val > 0
    h = 1e-7
    for _ in range(8):
        e = rng.normal(size=pos0.shape)
        vp, _, _ = dissipation_terms(stencil, pos0 + h * e, 0.04, params, 0)
        vm, _, _ = dissipation_terms(stencil, pos0 - h * e, 0.04, params, 0)
        fd = (vp - vm) / (2 * h)
        ana = float((grad * e).sum())
        assert abs(fd - ana) < 1e-5 * max(abs(ana), 1e-10)
        _, gp, _ = dissipation_terms(stencil, pos0 + h * e, 0.04, params, 1)
        _, gm, _ = dissipation_terms(stencil, pos0 - h * e, 0.04, params, 1)
        fd_h = (gp - gm) / (2 * h)
        ana_h = np.einsum("mij,mj->mi", hess, np.broadcast_to(e, pos0.shape))
        assert np.abs(fd_h - ana_h).max() < 1e-5 * max(np.abs(ana_h).max(), 1e-10)


def test_dissipation_nonnegative(rng):
    bodies, state, trees = _box_on_ground()
    params = FrictionParams(lam=0.4, epsilon=0.1, normal_scale=1e-6)
    stencil = build_friction_stencil(state, trees, params)
    for _ in range(20):
        pos = stencil.anchor + rng.normal(size=stencil.anchor.shape) * 0.01
        val, _, _ = dissipation_terms(stencil, pos, 0.04, params, 0)
        assert val >= 0.0


def test_friction_force_grows_with_lambda_and_weight():
    bodies, state, trees = _box_on_ground()
    slid = np.array([0.005, 0.0, 0.0])
    forces = []
    for lam in (0.1, 0.2, 0.4):
        params = FrictionParams(lam=lam, epsilon=0.1, normal_scale=1e-6)
        stencil = build_friction_stencil(state, trees, params)
        _, grad, _ = dissipation_terms(stencil, stencil.anchor + slid, 0.04, params, 1)
        forces.append(np.linalg.norm(grad.sum(axis=0)))
    assert forces[0] < forces[1] < forces[2]
    assert forces[1] == pytest.approx(2 * forces[0], rel=1e-9)
    # doubling the normal-force scale doubles the force too
    pa = FrictionParams(lam=0.2, epsilon=0.1, normal_scale=1e-6)
    pb = FrictionParams(lam=0.2, epsilon=0.1, normal_scale=2e-6)
    sa = build_friction_stencil(state, trees, pa)
    sb = build_friction_stencil(state, trees, pb)
    _, ga, _ = dissipation_terms(sa, sa.anchor + slid, 0.04, pa, 1)
    _, gb, _ = dissipation_terms(sb, sb.anchor + slid, 0.04, pb, 1)
    assert np.linalg.norm(gb) == pytest.approx(2 * np.linalg.norm(ga), rel=1e-9)


def test_friction_tangential_only(rng):
    """Each entry's damping force lies in its own lagged tangent plane."""
    bodies, state, trees = _box_on_ground()
    params = FrictionParams(lam=0.4, epsilon=0.1, normal_scale=1e-6)
    stencil = build_friction_stencil(state, trees, params)
    pos = stencil.anchor + rng.normal(size=stencil.anchor.shape) * 0.004
    _, grad, _ = dissipation_terms(stencil, pos, 0.04, params, 1)
    back = np.einsum("mij,mj->mi", stencil.projector, grad)
    assert np.abs(back - grad).max() < 1e-15  # T g == g: no normal component
    # a perfectly flat pair: vertical motion produces no damping force
    tri = np.array([[0.2, 0.0, 0.0], [-0.1, 0.2, 0.0], [0.0, -0.2, 0.0]])
    a = TriMeshBody("a", tri + [0, 0, 0.05], [[0, 1, 2]], static=False, mass=0.1)
    b = TriMeshBody("b", tri, [[0, 1, 2]], static=True)
    st2 = SystemState([a, b], [Pose.identity(), Pose.identity()])
    trees2 = [build_bsh(x) for x in (a, b)]
    stencil2 = build_friction_stencil(st2, trees2, params)
    assert stencil2.num_entries > 0
    _, g2, _ = dissipation_terms(
        stencil2, stencil2.anchor + [0.0, 0.0, 0.003], 0.04, params, 1
    )
    assert np.abs(g2).max() < 1e-12


def test_non_interference_with_normal_potential():
    bodies, state, trees = _box_on_ground()
    backend = BshBackend(bodies)
    far = SystemState(
        bodies, [Pose(np.array([0, 0, 0.8]), np.eye(3)), Pose.identity()]
    )
    grad_norm = np.linalg.norm(backend.evaluate(far, order=1).grad)
    assert grad_norm > 0
    params = FrictionParams(lam=0.4, epsilon=0.1, normal_scale=1e-6)
    ev = friction_dissipation(far, far, 0.04, params, trees)
    assert ev.value == 0.0  # adding D changes nothing at separation
