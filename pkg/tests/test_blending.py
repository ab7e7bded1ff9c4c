import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from diffcontact.blending import (
    BlendSpec,
    blend,
    smoothstep,
    smoothstep_d1,
    smoothstep_d2,
)
from diffcontact.evals import PotentialEval
from diffcontact.pair_potential import centered_potential


def test_smoothstep_boundaries():
    assert smoothstep(0.0) == 0.0
    assert smoothstep(1.0) == 1.0
    assert smoothstep(-5.0) == 0.0
    assert smoothstep(7.0) == 1.0
    assert smoothstep(0.5) == pytest.approx(0.5)


def test_smoothstep_endpoint_derivatives():
    h = 1e-6
    for x in (0.0, 1.0):
        fd = (smoothstep(x + h) - smoothstep(x - h)) / (2 * h)
        assert abs(fd) < 1e-9
    assert smoothstep_d1(0.0) == 0.0 and smoothstep_d1(1.0) == 0.0
    assert smoothstep_d2(0.0) == 0.0 and smoothstep_d2(1.0) == 0.0


@given(st.floats(min_value=1e-3, max_value=1 - 1e-3))
@settings(max_examples=100, deadline=None)
def test_smoothstep_derivative_consistency(x):
    h = 1e-6
    assert smoothstep_d1(x) == pytest.approx(
        (smoothstep(x + h) - smoothstep(x - h)) / (2 * h), abs=1e-7
    )
    assert smoothstep_d2(x) == pytest.approx(
        (smoothstep_d1(x + h) - smoothstep_d1(x - h)) / (2 * h), abs=1e-5
    )


@given(st.floats(min_value=0, max_value=1))
@settings(max_examples=100, deadline=None)
def test_smoothstep_monotone_in_unit_interval(x):
    assert 0.0 <= smoothstep(x) <= 1.0
    assert smoothstep_d1(x) >= 0.0


def _centered_pair_evals(r, members_i, members_j):
    ci = np.zeros(3)
    cj = np.array([r, 0.0, 0.0])
    near = centered_potential(ci, cj, len(members_i), len(members_j),
                              members_i=members_i, members_j=members_j, order=2)
    far = centered_potential(ci, cj, len(members_i), len(members_j),
                             members_i=members_i, members_j=members_j, order=2)
    return ci, cj, near, far


def _spec(r, d1=1.0, d2=1.5):
    mi = np.array([0, 1, 2])
    mj = np.array([3, 4, 5])
    ci = np.zeros(3)
    cj = np.array([r, 0.0, 0.0])
    return BlendSpec(d1=d1, d2=d2, center_i=ci, center_j=cj, members_i=mi, members_j=mj)


def _const_eval(value, support, order=2):
    ev = PotentialEval.zero(support, order)
    ev.value = value
    return ev


def test_blend_seam_exactness():
    sup = np.arange(6)
    near = _const_eval(5.0, sup)
    far = _const_eval(2.0, sup)
    assert blend(_spec(1.0), near, far).value == 5.0  # phi = 0
    assert blend(_spec(1.5), near, far).value == 2.0  # phi = 1
    mid = blend(_spec(1.25), near, far)
    assert mid.value == pytest.approx(3.5)  # phi(0.5) = 0.5


def test_blend_requires_operands():
    sup = np.arange(6)
    with pytest.raises(ValueError):
        blend(_spec(1.0), None, _const_eval(1.0, sup))
    with pytest.raises(ValueError):
        blend(_spec(2.0), _const_eval(1.0, sup), None)
    with pytest.raises(ValueError):
        blend(_spec(1.2), _const_eval(1.0, sup), None)


def test_blend_infinite_near_in_band_asserts():
    sup = np.arange(6)
    near = PotentialEval.infinite_eval(sup)
    far = _const_eval(1.0, sup)
    with pytest.raises(AssertionError):
        blend(_spec(1.2), near, far)


def test_blend_monotone_sandwich(rng):
    """With 0 <= P_far <= P_near the blended value stays between them."""
    sup = np.arange(6)
    for _ in range(50):
        r = rng.uniform(1.0, 1.5)
        pn = rng.uniform(1.0, 10.0)
        pf = rng.uniform(0.0, pn)
        out = blend(_spec(r), _const_eval(pn, sup), _const_eval(pf, sup))
        assert pf - 1e-12 <= out.value <= pn + 1e-12


def _blend_of_centereds(x_j, d1=1.0, d2=1.5, order=2):
    """A fully analytic blend: near and far are the same centered
    potential (supports differ in counts to exercise reconciliation)."""
    mi = np.array([0, 1, 2])
    mj = np.array([3, 4, 5, 6])
    ci = np.zeros(3)
    cj = np.asarray(x_j, dtype=float)
    spec = BlendSpec(d1=d1, d2=d2, center_i=ci, center_j=cj, members_i=mi, members_j=mj)
    near = centered_potential(ci, cj, 3, 4, members_i=mi, members_j=mj, order=order)
    far = centered_potential(ci * 0.5 + 0.5 * ci, cj, 3, 4, members_i=mi, members_j=mj, order=order)
    far = far.scaled(0.7)  # make the two operands genuinely different
    return blend(spec, near, far, order)


def test_blend_gradient_matches_fd():
    """FD through the full blend including the weight's center-distance
    chain (vertices move, centers are means)."""
    mi = np.array([0, 1, 2])
    mj = np.array([3, 4, 5, 6])
    base_i = np.array([[0.1, 0, 0], [-0.05, 0.1, 0], [-0.05, -0.1, 0]])
    base_j = np.array(
        [[1.2, 0, 0], [1.3, 0.1, 0], [1.3, -0.1, 0], [1.25, 0, 0.1]]
    )

    def build(vi, vj, order):
        ci = vi.mean(axis=0)
        cj = vj.mean(axis=0)
        spec = BlendSpec(d1=1.0, d2=1.5, center_i=ci, center_j=cj,
                         members_i=mi, members_j=mj)
        near = centered_potential(ci, cj, 3, 4, members_i=mi, members_j=mj, order=order)
        far = near.scaled(0.6)
        return blend(spec, near, far, order)

    def value(x):
        return build(x[:9].reshape(3, 3), x[9:].reshape(4, 3), 0).value

    def grad(x):
        return build(x[:9].reshape(3, 3), x[9:].reshape(4, 3), 1).grad.ravel()

    def hess(x):
        return build(x[:9].reshape(3, 3), x[9:].reshape(4, 3), 2).hess

    from diffcontact.oracles import fd_check

    x0 = np.concatenate([base_i.ravel(), base_j.ravel()])
    rep = fd_check(value, x0, h=1e-6, grad_fn=grad, hess_fn=hess)
    assert rep.grad_rel_err < 1e-6
    assert rep.hess_rel_err < 1e-5


def test_blend_c2_across_seams():
    """Analytic gradient/Hessian limits agree from both sides of each seam."""
    mi = np.array([0, 1, 2])
    mj = np.array([3, 4, 5])

    def build(r, order):
        ci = np.zeros(3)
        cj = np.array([r, 0.0, 0.0])
        spec = BlendSpec(d1=1.0, d2=1.5, center_i=ci, center_j=cj,
                         members_i=mi, members_j=mj)
        near = centered_potential(ci, cj, 3, 3, members_i=mi, members_j=mj, order=order)
        far = near.scaled(0.5)
        return blend(spec, near, far, order)

    for seam in (1.0, 1.5):
        eps = 1e-8
        lo = build(seam - eps, 2)
        hi = build(seam + eps, 2)
        gscale = np.abs(lo.grad).max()
        assert np.abs(lo.grad - hi.grad).max() / gscale < 1e-6
        hscale = np.abs(lo.hess).max()
        assert np.abs(lo.hess - hi.hess).max() / hscale < 1e-4


def test_force_cone_closure(rng):
    """If both operands push the clusters apart, so does the blend."""
    mi = np.array([0, 1, 2])
    mj = np.array([3, 4, 5])
    for _ in range(20):
        r = rng.uniform(1.01, 1.49)
        ci = np.zeros(3)
        cj = np.array([r, 0.0, 0.0])
        spec = BlendSpec(d1=1.0, d2=1.5, center_i=ci, center_j=cj,
                         members_i=mi, members_j=mj)
        near = centered_potential(ci, cj, 3, 3, members_i=mi, members_j=mj, order=1)
        far = near.scaled(rng.uniform(0.1, 0.99))  # P_far <= P_near
        out = blend(spec, near, far, 1)
        sep = ci - cj
        for row in range(3):
            assert (-out.grad[row]) @ sep > 0  # side-I force points I-ward
        for row in range(3, 6):
            assert (-out.grad[row]) @ (-sep) > 0
