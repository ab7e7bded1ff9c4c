"""Shared scene generators and property checks for the verify suites.

Both the CLI's ``verify`` command and the acceptance tests build their
random states through these helpers so that the checked populations match.
"""

from __future__ import annotations

import numpy as np

from . import so3
from .backends import BshBackend, LocalBaselineBackend
from .geometry import Pose, SystemState, TriMeshBody, make_box, min_pair_distance
from .pair_potential import solve_separating_plane


def random_rotation(rng) -> np.ndarray:
    return so3.exp_so3(rng.normal(size=3))


def box_pair_bodies(extents_a=(0.4, 0.3, 0.35), extents_b=(0.35, 0.4, 0.3)):
    va, fa = make_box(extents_a)
    vb, fb = make_box(extents_b)
    return [
        TriMeshBody("box_a", va, fa, static=True),
        TriMeshBody("box_b", vb, fb, static=True),
    ]


def random_two_body_state(rng, min_gap: float = 1e-3, bodies=None):
    """Random separated pose of two boxes plus a fresh hierarchical backend."""
    if bodies is None:
        bodies = box_pair_bodies()
    backend = BshBackend(bodies)
    while True:
        pose_a = Pose(rng.uniform(-0.2, 0.2, 3), random_rotation(rng))
        pose_b = Pose(rng.uniform(-0.2, 0.2, 3) + rng.normal(size=3) * 0.6, random_rotation(rng))
        state = SystemState(bodies, [pose_a, pose_b])
        if min_pair_distance(state) > min_gap:
            return state, backend


def random_mixed_state(rng, bodies=None):
    """Random pose pair, penetrating or not (for the barrier dichotomy)."""
    if bodies is None:
        bodies = box_pair_bodies()
    pose_a = Pose(rng.uniform(-0.2, 0.2, 3), random_rotation(rng))
    pose_b = Pose(rng.uniform(-0.6, 0.6, 3), random_rotation(rng))
    return SystemState(bodies, [pose_a, pose_b])


def seam_state(rng, which: str = "d1", offset_scale: float = 1e-3, bodies=None):
    """Two boxes separated so the root node pair sits within +-offset_scale
    of its blend seam (d1 or d2), still penetration-free."""
    if bodies is None:
        bodies = box_pair_bodies()
    backend = BshBackend(bodies)
    ta, tb = backend.trees
    for _ in range(200):
        rot_a, rot_b = random_rotation(rng), random_rotation(rng)
        direction = rng.normal(size=3)
        direction /= np.linalg.norm(direction)
        pose_a = Pose(np.zeros(3), rot_a)
        d1 = float(ta.radius[ta.root] + tb.radius[tb.root])
        target = d1 if which == "d1" else (1.0 + ta.epsilon) * d1
        r = target + rng.uniform(-offset_scale, offset_scale)
        ca = pose_a.apply(ta.center_rest[ta.root][None])[0]
        # place body b so the root centers are exactly r apart
        cb_rest = tb.center_rest[tb.root]
        pose_b = Pose(ca + r * direction - rot_b @ cb_rest, rot_b)
        state = SystemState(bodies, [pose_a, pose_b])
        if min_pair_distance(state) > 1e-4:
            return state, backend
    raise RuntimeError("could not build a separated seam state")


def tip_to_tip_triangle_bodies(rho: float = 0.04):
    """Two single-triangle bodies pointing at each other: center distance
    stays ~2*rho beyond the hull gap, so the far blend is active at a
    1e-2 gap while the near-exact barrier dominates at tiny gaps."""
    tri = np.array(
        [
            [0.0, 0.0, 0.0],  # tip at origin
            [-2.0 * rho, 0.7 * rho, 0.0],
            [-2.0 * rho, -0.7 * rho, 0.2 * rho],
        ]
    )
    a = TriMeshBody("tip_a", tri, [[0, 1, 2]], static=True)
    mirrored = tri * np.array([-1.0, 1.0, 1.0])
    b = TriMeshBody("tip_b", mirrored, [[0, 2, 1]], static=True)
    return [a, b]


def tip_gap_state(bodies, gap: float) -> SystemState:
    pose_a = Pose(np.zeros(3), np.eye(3))
    pose_b = Pose(np.array([gap, 0.0, 0.0]), np.eye(3))
    return SystemState(bodies, [pose_a, pose_b])


def property_checks(seed: int = 0):
    """Rows (check, value, threshold, status) for the `verify properties` suite."""
    rng = np.random.default_rng(seed)
    rows = []
    failed = False

    def record(name, value, threshold, ok):
        nonlocal failed
        failed |= not ok
        rows.append((name, f"{value:.6g}", threshold, "pass" if ok else "FAIL"))

    bodies = box_pair_bodies()
    backend = BshBackend(bodies)
    mismatch = 0
    for _ in range(100):
        state = random_mixed_state(rng, bodies)
        ev = backend.evaluate(state, order=0)
        separated = min_pair_distance(state) > 0
        if ev.infinite == separated:
            mismatch += 1
    record("barrier_finite_iff_separated(100)", mismatch, "== 0", mismatch == 0)

    tips = tip_to_tip_triangle_bodies()
    tip_backend = BshBackend(tips)
    v_wide = tip_backend.evaluate(tip_gap_state(tips, 1e-2), order=0).value
    v_tight = tip_backend.evaluate(tip_gap_state(tips, 1e-6), order=0).value
    ratio = v_tight / v_wide
    record("gap_shrink_ratio_1e-2_to_1e-6", ratio, ">= 1e4", ratio >= 1e4)

    bad = 0
    for _ in range(50):
        state, bk = random_two_body_state(rng, bodies=bodies)
        ev = bk.evaluate(state, order=1)
        na = bodies[0].num_vertices
        force_a = -ev.grad[ev.support < na].sum(axis=0)
        ca = state.world(0).mean(axis=0)
        cb = state.world(1).mean(axis=0)
        if force_a @ (ca - cb) <= 0:
            bad += 1
    record("net_force_separating(50)", bad, "== 0", bad == 0)

    far = SystemState(
        bodies, [Pose(np.zeros(3), np.eye(3)), Pose(np.array([1e3, 0, 0]), np.eye(3))]
    )
    gnorm = float(np.linalg.norm(backend.evaluate(far, order=1).grad))
    record("far_field_grad_norm_1e3m", gnorm, "> 0", gnorm > 0)
    baseline = LocalBaselineBackend(bodies)
    bnorm = float(np.linalg.norm(baseline.evaluate(far, order=1).grad)) if len(
        baseline.evaluate(far, order=1).support
    ) else 0.0
    record("baseline_far_grad_norm_1e3m", bnorm, "== 0", bnorm == 0.0)
    return rows, failed
