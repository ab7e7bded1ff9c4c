"""Locally supported leaf potential and lagged frictional damping.

The damping term is a weighted tangential velocity penalty: for every
nearby triangle pair (found through the sphere hierarchies of the previous
state) each participating vertex contributes

    lambda * |d P_local / d x_v (x^t)| * 0.5 * stiffness * |T (x_v - x_v^t)|^2 / dt

where T projects onto the tangent plane of that pair's separating plane at
x^t. All weights, projectors and anchors are functions of the previous
state only, so the term is an exact quadratic in the unknown state.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .blending import BlendSpec, blend
from .bsh import collect_close_leaf_pairs
from .evals import PotentialEval
from .geometry import SystemState
from .oracles import leaf_sphere
from .pair_potential import pair_potential, solve_separating_plane


@dataclass
class FrictionParams:
    lam: float = 0.0  # friction coefficient (dimensionless)
    epsilon: float = 0.1  # same margin as the sphere hierarchy
    d_parallel_stiffness: float = 1.0
    normal_scale: float = 1.0  # converts |dP_local/dx| to force units (mu in L)

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("friction coefficient must be nonnegative")


def local_leaf_potential(tri_i, tri_j, eps: float, order: int = 2, support_ids=None) -> PotentialEval:
    """Exact pair potential blended against zero: vanishes identically
    (value, gradient, Hessian) once the triangle centers are d2 apart."""
    tri_i = np.asarray(tri_i, dtype=float)
    tri_j = np.asarray(tri_j, dtype=float)
    if support_ids is None:
        support_ids = np.arange(6)
    support_ids = np.asarray(support_ids, dtype=int)
    ci, ri = leaf_sphere(tri_i)
    cj, rj = leaf_sphere(tri_j)
    d1 = ri + rj
    spec = BlendSpec(
        d1=d1,
        d2=(1.0 + eps) * d1,
        center_i=ci,
        center_j=cj,
        members_i=support_ids[:3],
        members_j=support_ids[3:],
    )
    phi = spec.weight()
    near = (
        pair_potential(tri_i, tri_j, order=order, support_ids=support_ids)
        if phi < 1.0
        else None
    )
    far = PotentialEval.zero(spec.support, order) if phi > 0.0 else None
    return blend(spec, near, far, order)


@dataclass
class FrictionStencil:
    """Lagged per-vertex damping data gathered from one state."""

    body: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    vertex: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    weight: np.ndarray = field(default_factory=lambda: np.zeros(0))
    projector: np.ndarray = field(default_factory=lambda: np.zeros((0, 3, 3)))
    anchor: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))

    @property
    def num_entries(self) -> int:
        return len(self.weight)


def _local_blend_grad(plane, tri_a, tri_b, eps: float):
    """Per-vertex gradient rows (6, 3) of the zero-far blended potential,
    straight from a solved plane ([i verts; j verts] order), or None when
    the pair is outside its support range."""
    from .blending import smoothstep, smoothstep_d1

    ca, ra = leaf_sphere(tri_a)
    cb, rb = leaf_sphere(tri_b)
    d1 = ra + rb
    delta = ca - cb
    r = float(np.sqrt(delta @ delta))
    s_param = (r - d1) / (eps * d1)
    phi = smoothstep(s_param)
    if phi >= 1.0:
        return None
    s = plane.margins
    b1 = -1.0 / (s * s)
    grad = np.empty((6, 3))
    grad[:3] = b1[1:4, None] * plane.n[None, :]
    grad[3:] = -b1[4:7, None] * plane.n[None, :]
    if phi > 0.0:
        dphi_dr = smoothstep_d1(s_param) / (eps * d1)
        u = delta / r
        sigma = np.concatenate([np.full(3, 1 / 3.0), np.full(3, -1 / 3.0)])
        grad = (1.0 - phi) * grad + (0.0 - plane.value) * dphi_dr * np.outer(sigma, u)
    return grad


def build_friction_stencil(
    state: SystemState, trees: list, params: FrictionParams, plane_cache: dict | None = None
) -> FrictionStencil:
    """Collect (vertex, weight, tangent projector, anchor) entries from all
    leaf pairs within their local-support range in ``state``."""
    bodies, verts, weights, projs, anchors = [], [], [], [], []
    n = state.num_bodies
    for a in range(n):
        va = state.world(a)
        tris_a = state.bodies[a].triangles
        for b in range(a + 1, n):
            vb = state.world(b)
            tris_b = state.bodies[b].triangles
            for ia, ib in collect_close_leaf_pairs(state, trees, a, b):
                fa, fb = tris_a[ia], tris_b[ib]
                tri_a, tri_b = va[fa], vb[fb]
                key = init = None
                if plane_cache is not None:
                    key = ((a, b), int(ia), int(ib))
                    init = plane_cache.get(key)
                plane = solve_separating_plane(tri_a, tri_b, init=init)
                if key is not None:
                    plane_cache[key] = np.concatenate([plane.n, [plane.d]])
                grad = _local_blend_grad(plane, tri_a, tri_b, params.epsilon)
                if grad is None:
                    continue
                nrm = plane.n / np.linalg.norm(plane.n)
                tangent = np.eye(3) - np.outer(nrm, nrm)
                sides = np.concatenate([np.full(3, a), np.full(3, b)])
                locals_ = np.concatenate([fa, fb])
                for row, vid, body in zip(range(6), locals_, sides):
                    w = params.normal_scale * float(np.linalg.norm(grad[row]))
                    bodies.append(int(body))
                    verts.append(int(vid))
                    weights.append(w)
                    projs.append(tangent)
                    anchors.append(state.world(int(body))[int(vid)])
    if not weights:
        return FrictionStencil()
    return FrictionStencil(
        np.array(bodies),
        np.array(verts),
        np.array(weights),
        np.array(projs),
        np.array(anchors),
    )


def dissipation_terms(
    stencil: FrictionStencil,
    positions: np.ndarray,
    dt: float,
    params: FrictionParams,
    order: int = 2,
):
    """D, dD/dx, d2D/dx2 for stencil-entry positions (m, 3).

    The Hessian is block diagonal: (m, 3, 3) per entry.
    """
    if stencil.num_entries == 0:
        return 0.0, None if order < 1 else np.zeros((0, 3)), None
    coef = params.lam * params.d_parallel_stiffness / dt
    disp = positions - stencil.anchor
    tdisp = np.einsum("mij,mj->mi", stencil.projector, disp)
    value = float(0.5 * coef * np.sum(stencil.weight * np.einsum("mi,mi->m", tdisp, tdisp)))
    if order < 1:
        return value, None, None
    grad = coef * stencil.weight[:, None] * tdisp
    if order < 2:
        return value, grad, None
    hess = coef * stencil.weight[:, None, None] * stencil.projector
    return value, grad, hess


def friction_dissipation(
    x_next: SystemState,
    x_curr: SystemState,
    dt: float,
    params: FrictionParams,
    trees: list,
    order: int = 2,
) -> PotentialEval:
    """Damping potential of ``x_next`` with weights lagged at ``x_curr``.

    Returned derivatives are with respect to the next state's world vertex
    coordinates (global vertex ids).
    """
    stencil = build_friction_stencil(x_curr, trees, params)
    support = np.unique(
        np.array(
            [x_curr.vertex_offset(b) + v for b, v in zip(stencil.body, stencil.vertex)],
            dtype=int,
        )
    )
    out = PotentialEval.zero(support, order)
    if stencil.num_entries == 0:
        return out
    positions = np.array(
        [x_next.world(b)[v] for b, v in zip(stencil.body, stencil.vertex)]
    )
    value, grad, hess = dissipation_terms(stencil, positions, dt, params, order)
    out.value = value
    if order >= 1:
        idx = np.searchsorted(
            support,
            np.array([x_curr.vertex_offset(b) + v for b, v in zip(stencil.body, stencil.vertex)]),
        )
        for e, i in enumerate(idx):
            out.grad[i] += grad[e]
            if order >= 2:
                out.hess[3 * i : 3 * i + 3, 3 * i : 3 * i + 3] += hess[e]
    return out
