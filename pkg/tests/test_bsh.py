import numpy as np
import pytest

from diffcontact.backends import BshBackend
from diffcontact.bsh import (
    InteractionCounts,
    build_bsh,
    check_tree_invariants,
    collect_close_leaf_pairs,
    count_interactions,
    process_pair,
    total_potential,
)
from diffcontact.geometry import (
    Pose,
    SystemState,
    TriMeshBody,
    make_box,
    make_icosphere,
    min_pair_distance,
)
from diffcontact.oracles import brute_force_potential, fd_check
from diffcontact.pair_potential import centered_potential, pair_potential

TRI = np.array([[0.2, 0.0, 0.0], [-0.1, 0.15, 0.0], [0.0, -0.2, 0.05]])


def single_triangle_body(name):
    return TriMeshBody(name, TRI, [[0, 1, 2]], static=True)


def rosette_body(name, rho=0.3, layers=8):
    """Concentric rotated triangles: sub-cluster spheres stay fat relative
    to their spread, so stacked rosette pairs keep every node pair inside
    its own d1 (full expansion, zero blending)."""
    tris = []
    for k in range(layers):
        ang = 0.12 * k
        rr = rho * (1 + 0.05 * k)
        tris.append(
            [
                [rr * np.cos(ang + a), rr * np.sin(ang + a), 0.0]
                for a in (0.0, 2.0943951, 4.1887902)
            ]
        )
    verts = np.asarray(tris, dtype=float).reshape(-1, 3)
    faces = np.arange(3 * layers).reshape(layers, 3)
    return TriMeshBody(name, verts, faces, static=True)


def test_build_single_triangle():
    body = single_triangle_body("t")
    tree = build_bsh(body)
    assert tree.num_nodes == 1
    assert tree.is_leaf(tree.root)
    c = TRI.mean(axis=0)
    assert np.allclose(tree.center_rest[tree.root], c)
    assert tree.radius[tree.root] == pytest.approx(
        np.max(np.linalg.norm(TRI - c, axis=1))
    )


def test_build_two_triangles_layered():
    verts = np.vstack([TRI, TRI + [1.0, 0, 0]])
    body = TriMeshBody("two", verts, [[0, 1, 2], [3, 4, 5]], static=True)
    tree = build_bsh(body)
    assert tree.num_nodes == 3
    root = tree.root
    for child in (tree.left[root], tree.right[root]):
        gap = np.linalg.norm(tree.center_rest[root] - tree.center_rest[child])
        assert tree.radius[root] >= gap + tree.radius[child] - 1e-12


def test_build_sphere_invariants_and_depth():
    verts, faces = make_icosphere(0.5, 2)  # 320 triangles
    body = TriMeshBody("ball", verts, faces)
    tree = build_bsh(body)
    check_tree_invariants(tree, body)
    assert tree.depth() <= 2 * np.log2(body.num_triangles) + 4


def test_build_512_sphere_depth():
    verts, faces = make_icosphere(0.5, 2)
    # two levels of subdivision already checked; the 512-triangle case uses
    # a uv-sphere style refinement of comparable size
    from diffcontact.geometry import make_uv_sphere

    verts, faces = make_uv_sphere(0.5, 17, 16)  # 512 triangles
    body = TriMeshBody("ball512", verts, faces)
    tree = build_bsh(body)
    check_tree_invariants(tree, body)
    assert body.num_triangles == 512
    assert tree.depth() <= 2 * np.log2(512) + 4


def test_empty_mesh_rejected():
    with pytest.raises(ValueError):
        body = TriMeshBody("e", TRI, np.zeros((0, 3), dtype=int), static=True)
        build_bsh(body)


def test_far_pair_is_centered_without_solves():
    a, b = single_triangle_body("a"), single_triangle_body("b")
    state = SystemState(
        [a, b], [Pose.identity(), Pose(np.array([5.0, 0, 0]), np.eye(3))]
    )
    trees = [build_bsh(a), build_bsh(b)]
    counts = InteractionCounts()
    ev = total_potential(state, trees, order=0, counts=counts)
    assert counts.exact_terms == 0
    assert counts.centered_terms == 1
    ci = state.world(0).mean(axis=0)
    cj = state.world(1).mean(axis=0)
    assert ev.value == pytest.approx(
        centered_potential(ci, cj, 3, 3, order=0).value, rel=1e-14
    )


def test_close_pair_equals_exact_potential():
    a, b = single_triangle_body("a"), single_triangle_body("b")
    state = SystemState(
        [a, b], [Pose.identity(), Pose(np.array([0.0, 0, 0.25]), np.eye(3))]
    )
    trees = [build_bsh(a), build_bsh(b)]
    ev = total_potential(state, trees, order=0)
    ref = pair_potential(state.world(0), state.world(1), order=0).value
    assert ev.value == pytest.approx(ref, rel=1e-14)


def test_rosette_matches_brute_force():
    """Every visited node pair sits inside its d1: the hierarchy fully
    expands and must agree with the flat per-pair summation."""
    a = rosette_body("a")
    b = rosette_body("b")
    state = SystemState(
        [a, b], [Pose.identity(), Pose(np.array([0.0, 0.0, 0.25]), np.eye(3))]
    )
    trees = [build_bsh(a), build_bsh(b)]
    # premise check: full expansion means 64 exact terms and no centered ones
    counts = InteractionCounts()
    ev = total_potential(state, trees, order=1, counts=counts)
    assert counts.exact_terms == 64
    assert counts.centered_terms == 0
    ref = brute_force_potential(state, order=1)
    assert ev.value == pytest.approx(ref.value, rel=1e-10)
    assert np.abs(ev.grad - ref.grad).max() <= 1e-10 * np.abs(ref.grad).max()


def test_pruning_neutrality(rng):
    from conftest import box_pair_state

    for sep in (0.75, 1.1, 1.6, 2.5):
        state = box_pair_state(rng, separation=sep)
        trees = [build_bsh(b) for b in state.bodies]
        if min_pair_distance(state) <= 0:
            continue
        on = total_potential(state, trees, order=1, prune=True)
        off = total_potential(state, trees, order=1, prune=False)
        assert abs(on.value - off.value) <= 1e-10 * max(1.0, abs(off.value))
        assert np.abs(on.grad - off.grad).max() <= 1e-10 * max(
            np.abs(off.grad).max(), 1e-12
        )


def test_single_body_zero():
    a = single_triangle_body("a")
    state = SystemState([a], [Pose.identity()])
    ev = total_potential(state, [build_bsh(a)], order=1)
    assert ev.value == 0.0
    assert ev.grad.size == 0


def test_three_body_additivity():
    bodies = [single_triangle_body(f"b{i}") for i in range(3)]
    poses = [
        Pose.identity(),
        Pose(np.array([1.2, 0, 0]), np.eye(3)),
        Pose(np.array([0, 1.5, 0.3]), np.eye(3)),
    ]
    state = SystemState(bodies, poses)
    trees = [build_bsh(b) for b in bodies]
    total = total_potential(state, trees, order=0).value
    parts = 0.0
    for a in range(3):
        for b in range(a + 1, 3):
            parts += process_pair(state, trees, a, b, order=0).value
    assert total == pytest.approx(parts, rel=1e-14)


def test_penetration_sentinel():
    va, fa = make_box((0.4, 0.4, 0.4))
    a = TriMeshBody("a", va, fa, static=True)
    b = TriMeshBody("b", va, fa, static=True)
    state = SystemState(
        [a, b], [Pose.identity(), Pose(np.array([0.2, 0.0, 0.0]), np.eye(3))]
    )
    trees = [build_bsh(x) for x in [a, b]]
    ev = total_potential(state, trees, order=0)
    assert ev.infinite


def test_total_gradient_vs_fd_including_seam(rng):
    from conftest import box_pair_state
    from diffcontact.verify_support import seam_state

    def functions(state, backend):
        bodies = state.bodies
        base = [p.copy() for p in state.poses]

        def apply_u(u):
            poses = [p.copy() for p in base]
            poses[1].translation = base[1].translation + u
            return SystemState(bodies, poses)

        def value(u):
            return backend.evaluate(apply_u(u), order=0).value

        def grad(u):
            ev = backend.evaluate(apply_u(u), order=1)
            na = bodies[0].num_vertices
            return ev.grad[ev.support >= na].sum(axis=0)

        return value, grad

    state = box_pair_state(rng, separation=0.75)
    backend = BshBackend(state.bodies)
    value, grad = functions(state, backend)
    rep = fd_check(value, np.zeros(3), h=1e-6, grad_fn=grad)
    assert rep.grad_rel_err < 1e-6

    state, backend = seam_state(rng, "d1")
    value, grad = functions(state, backend)
    rep = fd_check(value, np.zeros(3), h=1e-7, grad_fn=grad)
    assert rep.grad_rel_err < 1e-5


def test_net_force_separating_and_far_support(rng):
    from conftest import box_pair_state

    state = box_pair_state(rng, separation=1.0)
    backend = BshBackend(state.bodies)
    ev = backend.evaluate(state, order=1)
    na = state.bodies[0].num_vertices
    force_a = -ev.grad[ev.support < na].sum(axis=0)
    ca = state.world(0).mean(axis=0)
    cb = state.world(1).mean(axis=0)
    assert force_a @ (ca - cb) > 0
    far = SystemState(
        state.bodies,
        [Pose.identity(), Pose(np.array([1e3, 0, 0]), np.eye(3))],
    )
    assert np.linalg.norm(backend.evaluate(far, order=1).grad) > 0


def test_count_interactions_far_prune():
    a, b = single_triangle_body("a"), single_triangle_body("b")
    state = SystemState(
        [a, b], [Pose.identity(), Pose(np.array([100.0, 0, 0]), np.eye(3))]
    )
    trees = [build_bsh(a), build_bsh(b)]
    assert count_interactions(state, trees) == (0, 1)


def test_collect_close_leaf_pairs_superset():
    va, fa = make_box((0.3, 0.3, 0.3))
    a = TriMeshBody("a", va, fa, static=True)
    b = TriMeshBody("b", va, fa, static=True)
    state = SystemState(
        [a, b], [Pose.identity(), Pose(np.array([0.35, 0.0, 0.0]), np.eye(3))]
    )
    trees = [build_bsh(a), build_bsh(b)]
    pairs = set(collect_close_leaf_pairs(state, trees, 0, 1))
    # every leaf pair within its own d2 must be present
    wa, wb = state.world(0), state.world(1)
    for ia in range(12):
        for ib in range(12):
            ta = wa[a.triangles[ia]]
            tb = wb[b.triangles[ib]]
            ca, ra = ta.mean(axis=0), np.max(np.linalg.norm(ta - ta.mean(axis=0), axis=1))
            cb, rb = tb.mean(axis=0), np.max(np.linalg.norm(tb - tb.mean(axis=0), axis=1))
            if np.linalg.norm(ca - cb) < 1.1 * (ra + rb):
                assert (ia, ib) in pairs


def test_sandwich_on_recursion(rng):
    """At separated node pairs the blended value sits between the child
    sum (near form) and the centered value (far form)."""
    from conftest import box_pair_state

    state = box_pair_state(rng, separation=1.05)
    trees = [build_bsh(b) for b in state.bodies]
    ta, tb = trees
    ca = ta.world_centers(state.poses[0])
    cb = tb.world_centers(state.poses[1])
    root_a, root_b = ta.root, tb.root
    r = np.linalg.norm(ca[root_a] - cb[root_b])
    d1 = ta.radius[root_a] + tb.radius[root_b]
    if r < d1:
        return  # sampled state not separated at the root; other tests cover it
    whole = process_pair(state, trees, 0, 1, order=0).value
    far = centered_potential(ca[root_a], cb[root_b], 1, 1, order=0).value
    # near form: force full expansion by summing child pairs
    near = 0.0
    for ia in ta.children(root_a):
        for ib in tb.children(root_b):
            sub = _eval_node_pair(state, trees, ia, ib)
            near += sub
    assert far - 1e-9 <= whole <= near + 1e-9


def _eval_node_pair(state, trees, ia, ib):
    from diffcontact.bsh import _PairEvaluator

    ta, tb = trees
    ev = _PairEvaluator(
        ta, tb, state.world(0), state.world(1),
        ta.world_centers(state.poses[0]), tb.world_centers(state.poses[1]),
        state.bodies[0], state.bodies[1], 0, True, InteractionCounts(),
        cache_key=(0, 1),
    )
    return ev.run(ia, ib)[0]


def test_threaded_evaluation_matches_sequential():
    """Body pairs evaluated in a thread pool with ordered merging give the
    same result as the sequential path."""
    bodies = [single_triangle_body(f"b{i}") for i in range(3)]
    poses = [
        Pose.identity(),
        Pose(np.array([0.45, 0.05, 0.0]), np.eye(3)),
        Pose(np.array([0.1, 0.6, 0.2]), np.eye(3)),
    ]
    state = SystemState(bodies, poses)
    seq = BshBackend(bodies, threads=1).evaluate(state, order=1)
    par = BshBackend(bodies, threads=3).evaluate(state, order=1)
    assert par.value == seq.value
    assert np.array_equal(par.support, seq.support)
    assert np.array_equal(par.grad, seq.grad)
