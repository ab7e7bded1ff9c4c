"""Independent verification machinery.

Everything here either avoids the hierarchical evaluator entirely (the
brute-force potential shares only the per-pair term code, never the tree
traversal) or checks derivatives against finite differences. These oracles
produce the frozen expected values used by the regression and acceptance
suites.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import bsh as bsh_mod
from .blending import BlendSpec, blend
from .evals import PotentialEval, sum_evals
from .geometry import Pose, SystemState, TriMeshBody, make_grid_sheet
from .pair_potential import centered_potential, pair_potential


# ---------------------------------------------------------------------------
# finite differences


@dataclass
class FiniteDiffReport:
    max_rel_err: float
    argmax: tuple
    h: float
    stencil: str = "central"
    grad_rel_err: float | None = None
    hess_rel_err: float | None = None


def _central_grad(value_fn, at, h):
    at = np.asarray(at, dtype=float)
    g = np.zeros_like(at)
    for i in range(at.size):
        e = np.zeros_like(at)
        e.flat[i] = h
        fp = value_fn(at + e)
        fm = value_fn(at - e)
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise ValueError(f"function not finite within the stencil at dim {i}")
        g.flat[i] = (fp - fm) / (2.0 * h)
    return g


def _central_jac(vec_fn, at, h):
    at = np.asarray(at, dtype=float)
    f0 = np.asarray(vec_fn(at), dtype=float).ravel()
    jac = np.zeros((f0.size, at.size))
    for i in range(at.size):
        e = np.zeros_like(at)
        e.flat[i] = h
        fp = np.asarray(vec_fn(at + e), dtype=float).ravel()
        fm = np.asarray(vec_fn(at - e), dtype=float).ravel()
        if not (np.all(np.isfinite(fp)) and np.all(np.isfinite(fm))):
            raise ValueError(f"gradient not finite within the stencil at dim {i}")
        jac[:, i] = (fp - fm) / (2.0 * h)
    return jac


def fd_check(value_fn, at, h: float = 1e-5, grad_fn=None, hess_fn=None) -> FiniteDiffReport:
    """Central-difference check of an analytic gradient and/or Hessian.

    Relative errors are infinity-norm errors scaled by the analytic
    quantity's own infinity norm (floored at 1e-12).
    """
    at = np.asarray(at, dtype=float)
    grad_err = hess_err = None
    argmax = ()
    if grad_fn is not None:
        g = np.asarray(grad_fn(at), dtype=float).ravel()
        g_fd = _central_grad(value_fn, at, h).ravel()
        denom = max(float(np.max(np.abs(g))), 1e-12)
        diff = np.abs(g_fd - g)
        grad_err = float(np.max(diff)) / denom
        argmax = ("grad", int(np.argmax(diff)))
    if hess_fn is not None:
        if grad_fn is None:
            raise ValueError("hessian check requires the analytic gradient")
        hess = np.asarray(hess_fn(at), dtype=float)
        h_fd = _central_jac(grad_fn, at, h)
        h_fd = 0.5 * (h_fd + h_fd.T)
        denom = max(float(np.max(np.abs(hess))), 1e-12)
        diff = np.abs(h_fd - hess)
        hess_err = float(np.max(diff)) / denom
        if grad_err is None or hess_err > grad_err:
            flat = int(np.argmax(diff))
            argmax = ("hess", flat // hess.shape[1], flat % hess.shape[1])
    errs = [e for e in (grad_err, hess_err) if e is not None]
    if not errs:
        raise ValueError("nothing to check: pass grad_fn and/or hess_fn")
    return FiniteDiffReport(
        max_rel_err=max(errs),
        argmax=argmax,
        h=h,
        grad_rel_err=grad_err,
        hess_rel_err=hess_err,
    )


# ---------------------------------------------------------------------------
# brute-force potential


def leaf_sphere(tri: np.ndarray):
    """(center, radius) of a triangle's bounding sphere about the vertex mean."""
    c = tri.mean(axis=0)
    return c, float(np.max(np.linalg.norm(tri - c, axis=1)))


def brute_force_potential(
    state: SystemState,
    order: int = 2,
    leaf_blend: bool = True,
    epsilon: float = 0.1,
) -> PotentialEval:
    """Sum of per-pair potentials over all inter-body triangle pairs.

    No hierarchy and no internal-node blending; with ``leaf_blend`` each
    pair is blended with its centered form at the triangle-sphere scale,
    mirroring the hierarchical evaluator's close-range regime.
    """
    n = state.num_bodies
    terms = []
    supports = []
    for a in range(n):
        va = state.world(a)
        tris_a = state.bodies[a].triangles
        off_a = state.vertex_offset(a)
        for b in range(a + 1, n):
            vb = state.world(b)
            tris_b = state.bodies[b].triangles
            off_b = state.vertex_offset(b)
            for fa in tris_a:
                tri_a = va[fa]
                ids_a = fa + off_a
                for fb in tris_b:
                    tri_b = vb[fb]
                    ids = np.concatenate([ids_a, fb + off_b])
                    term = _leaf_term(tri_a, tri_b, ids, order, leaf_blend, epsilon)
                    if term.infinite:
                        return PotentialEval.infinite_eval(term.support)
                    terms.append(term)
                    supports.append(term.support)
    if not terms:
        return PotentialEval.zero(np.arange(0), order)
    union = np.unique(np.concatenate(supports))
    return sum_evals(terms, union, order)


def _leaf_term(tri_a, tri_b, ids, order, leaf_blend, epsilon):
    if not leaf_blend:
        return pair_potential(tri_a, tri_b, order=order, support_ids=ids)
    ca, ra = leaf_sphere(tri_a)
    cb, rb = leaf_sphere(tri_b)
    d1 = ra + rb
    spec = BlendSpec(
        d1=d1,
        d2=(1.0 + epsilon) * d1,
        center_i=ca,
        center_j=cb,
        members_i=ids[:3],
        members_j=ids[3:],
    )
    phi = spec.weight()
    near = (
        pair_potential(tri_a, tri_b, order=order, support_ids=ids)
        if phi < 1.0
        else None
    )
    far = (
        centered_potential(ca, cb, 3, 3, members_i=ids[:3], members_j=ids[3:], order=order)
        if phi > 0.0
        else None
    )
    return blend(spec, near, far, order)


# ---------------------------------------------------------------------------
# point-segment toy model: kinked second derivative of distance-based models


@dataclass
class KinkCurve:
    xs: np.ndarray
    dist: np.ndarray
    dist_d1: np.ndarray
    d2_jump_at_1: float
    d2_jump_at_2: float


def point_segment_distance_curve(num: int = 601) -> KinkCurve:
    """Distance from the moving point (x, 1) to the segment (1,0)-(2,0).

    d is C1 but its second derivative jumps where the closest feature
    switches between a segment endpoint and the segment interior (x = 1
    and x = 2); a log-barrier of this distance is therefore not twice
    differentiable there.
    """
    xs = np.linspace(0.0, 3.0, num)
    d = np.empty(num)
    d1 = np.empty(num)
    for i, x in enumerate(xs):
        if x < 1.0:
            d[i] = np.hypot(x - 1.0, 1.0)
            d1[i] = (x - 1.0) / d[i]
        elif x <= 2.0:
            d[i] = 1.0
            d1[i] = 0.0
        else:
            d[i] = np.hypot(x - 2.0, 1.0)
            d1[i] = (x - 2.0) / d[i]
    # analytic second derivatives: 1/d^3 on the vertex regimes, 0 inside
    jump1 = abs(1.0 - 0.0)  # d=1 at x=1
    jump2 = abs(1.0 - 0.0)
    return KinkCurve(xs, d, d1, jump1, jump2)


def one_sided_limit(fn, at: float, side: int, delta: float = 1e-3):
    """Quadratic extrapolation of fn to ``at`` from samples at side*{1,2,3}*delta."""
    xs = at + side * delta * np.array([1.0, 2.0, 3.0])
    ys = np.array([fn(x) for x in xs])
    # Lagrange extrapolation to 0 offset: 3 y1 - 3 y2 + y3
    return 3.0 * ys[0] - 3.0 * ys[1] + ys[2]


def second_derivative_jump(fn_d2, at: float, delta: float = 1e-3) -> float:
    """|right limit - left limit| of a (possibly kinked) second derivative."""
    left = one_sided_limit(fn_d2, at, -1, delta)
    right = one_sided_limit(fn_d2, at, +1, delta)
    return abs(right - left)


def pair_sweep_geometry():
    """3D analogue of the point-segment sweep: a small triangle at height 1
    sliding along x over a fixed triangle spanning x in [1, 2]."""
    base = np.array([[1.0, 0.0, 0.0], [2.0, 0.0, 0.0], [1.5, 0.6, 0.0]])
    r = 0.1
    probe = np.array(
        [
            [r, 0.0, 0.0],
            [-0.5 * r, 0.866025403784 * r, 0.0],
            [-0.5 * r, -0.866025403784 * r, 0.0],
        ]
    )
    return base, probe


def pair_sweep_value(x: float) -> float:
    base, probe = pair_sweep_geometry()
    moved = probe + np.array([x, 0.0, 1.0])
    return pair_potential(base, moved, order=0).value


def pair_sweep_dvalue(x: float) -> float:
    """dP/dx along the sweep (analytic gradient projected on the direction)."""
    base, probe = pair_sweep_geometry()
    moved = probe + np.array([x, 0.0, 1.0])
    ev = pair_potential(base, moved, order=1)
    # moving vertices are ids 3..5; direction is unit x for all three
    return float(ev.grad[3:, 0].sum())


def pair_sweep_d2(x: float, h: float = 1e-6) -> float:
    return (pair_sweep_dvalue(x + h) - pair_sweep_dvalue(x - h)) / (2.0 * h)


# ---------------------------------------------------------------------------
# uniform-grid complexity experiment


def make_grid_pair_state(n_cells: int, gap: float = 1e-2, cell: float = 1.0):
    verts, faces = make_grid_sheet(n_cells, cell)
    half = 0.5 * n_cells * cell
    body_a = TriMeshBody("grid_a", verts, faces, static=True)
    body_b = TriMeshBody("grid_b", verts, faces, static=True)
    pose_a = Pose(np.array([-half - 0.5 * gap, 0.0, 0.0]), np.eye(3))
    pose_b = Pose(np.array([half + 0.5 * gap, 0.0, 0.0]), np.eye(3))
    return SystemState([body_a, body_b], [pose_a, pose_b])


def uniform_grid_experiment(n_list, epsilon: float = 0.1, gap: float = 1e-2):
    """Interaction-term counts for two abutting uniform-grid bodies.

    Returns a list of (N, exact_terms, centered_terms) rows; each body has
    2 N^2 triangles, so near-linear total cost shows up as roughly 4x terms
    per doubling of N.
    """
    rows = []
    for n in n_list:
        if n < 4:
            raise ValueError("grid experiment needs N >= 4")
        state = make_grid_pair_state(n, gap=gap)
        trees = [bsh_mod.build_bsh(b, epsilon=epsilon) for b in state.bodies]
        exact, centered = bsh_mod.count_interactions(state, trees)
        rows.append((n, exact, centered))
    return rows
