import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from diffcontact import so3
from diffcontact.geometry import (
    DegenerateTriangleError,
    Pose,
    SystemState,
    TriMeshBody,
    load_obj,
    make_box,
    make_grid_sheet,
    make_icosphere,
    make_octahedron,
    min_pair_distance,
    save_obj,
    triangle_pair_closest,
    triangle_pair_distance,
    triangles_disjoint,
    world_vertices,
)

TRI = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])


def test_world_vertices_identity():
    body = TriMeshBody("t", np.array([[1.0, 0, 0], [0, 1, 0], [0, 0, 1]]), [[0, 1, 2]])
    out = world_vertices(body, Pose.identity())
    assert np.allclose(out[0], [1, 0, 0])


def test_world_vertices_translation():
    body = TriMeshBody("t", np.array([[1.0, 0, 0], [0, 1, 0], [0, 0, 1]]), [[0, 1, 2]])
    out = world_vertices(body, Pose(np.array([0.0, 0, 1.0]), np.eye(3)))
    assert np.allclose(out[0], [1, 0, 1])


def test_world_vertices_rotation():
    body = TriMeshBody("t", np.array([[1.0, 0, 0], [0, 1, 0], [0, 0, 1]]), [[0, 1, 2]])
    rot = so3.exp_so3(np.array([0.0, 0.0, np.pi / 2]))
    out = world_vertices(body, Pose(np.zeros(3), rot))
    assert np.allclose(out[0], [0, 1, 0], atol=1e-12)


def test_rigid_invariance_and_mean_commutation(rng):
    verts, faces = make_icosphere(0.4, 1)
    body = TriMeshBody("ball", verts, faces)
    pose = Pose(rng.normal(size=3), so3.exp_so3(rng.normal(size=3)))
    out = world_vertices(body, pose)
    d_rest = np.linalg.norm(verts[None] - verts[:, None], axis=-1)
    d_world = np.linalg.norm(out[None] - out[:, None], axis=-1)
    denom = np.maximum(d_rest, 1e-30)
    assert np.abs(d_world - d_rest).max() / denom.max() < 1e-10
    subset = rng.choice(len(verts), size=17, replace=False)
    assert np.allclose(
        out[subset].mean(axis=0), pose.apply(verts[subset].mean(axis=0)[None])[0],
        atol=1e-12,
    )


def test_triangles_disjoint_cases():
    far = triangles_disjoint(TRI, TRI + [0, 0, 1.0])
    assert far.disjoint and np.isclose(far.distance, 1.0)
    n, d = far.witness_plane
    assert np.all(TRI @ n + d > 0)
    assert np.all((TRI + [0, 0, 1.0]) @ n + d < 0) or np.all((TRI + [0, 0, 1.0]) @ n + d > 0)

    same = triangles_disjoint(TRI, TRI.copy())
    assert not same.disjoint

    touching = triangles_disjoint(TRI, TRI + [1.0, 0, 0])  # shares the vertex (1,0,0)
    assert not touching.disjoint


def test_triangles_disjoint_rejects_degenerate():
    bad = np.array([[0.0, 0, 0], [1.0, 0, 0], [2.0, 0, 0]])
    with pytest.raises(DegenerateTriangleError):
        triangles_disjoint(bad, TRI + [0, 0, 1.0])


def test_piercing_pair_has_zero_distance():
    # an edge of the vertical triangle passes through the horizontal one
    vert = np.array([[0.2, 0.3, -0.5], [0.3, 0.2, 0.8], [0.9, 0.9, 0.5]])
    assert triangle_pair_distance(TRI, vert) == 0.0


def test_coplanar_contained_triangle():
    inner = TRI * 0.2 + [0.2, 0.2, 0.0]
    assert triangle_pair_distance(TRI, inner) < 1e-12  # within the closed-hull slack
    assert not triangles_disjoint(TRI, inner).disjoint


def test_distance_matches_sampled_oracle(rng):
    """Dense barycentric sampling gives an upper bound converging to the
    true distance; the exact routine must match from below."""
    n = 40
    w = []
    for i in range(n + 1):
        for j in range(n + 1 - i):
            w.append((i / n, j / n, (n - i - j) / n))
    w = np.array(w)
    for trial in range(12):
        ta = rng.normal(size=(3, 3))
        tb = rng.normal(size=(3, 3)) + [0, 0, 3.0]
        d_exact, pa, pb = triangle_pair_closest(ta, tb)
        pts_a = w @ ta
        pts_b = w @ tb
        d2 = ((pts_a[:, None, :] - pts_b[None, :, :]) ** 2).sum(-1)
        d_s = np.sqrt(d2.min())
        assert d_exact <= d_s + 1e-12
        assert d_s - d_exact < 4.0 / n  # sampling resolution bound
        assert np.isclose(np.linalg.norm(pa - pb), d_exact)


def test_min_pair_distance_cases():
    va, fa = make_box((1.0, 1.0, 1.0))
    a = TriMeshBody("a", va, fa, static=True)
    b = TriMeshBody("b", va, fa, static=True)
    gap = SystemState(
        [a, b], [Pose.identity(), Pose(np.array([1.5, 0, 0]), np.eye(3))]
    )
    assert abs(min_pair_distance(gap) - 0.5) < 1e-9
    single = SystemState([a], [Pose.identity()])
    assert min_pair_distance(single) == float("inf")
    touch = SystemState(
        [a, b], [Pose.identity(), Pose(np.array([1.0, 0, 0]), np.eye(3))]
    )
    assert min_pair_distance(touch) < 1e-9


def test_obj_roundtrip(tmp_path):
    verts, faces = make_octahedron(0.3)
    path = tmp_path / "m.obj"
    save_obj(path, verts, faces)
    v2, f2 = load_obj(path)
    assert np.allclose(v2, verts)
    assert np.array_equal(f2, faces)


def test_obj_rejects_garbage(tmp_path):
    path = tmp_path / "bad.obj"
    path.write_text("v 0 0\n")
    with pytest.raises(ValueError):
        load_obj(path)


def test_body_validation():
    with pytest.raises(ValueError):
        TriMeshBody("bad", TRI, [[0, 1, 5]])
    with pytest.raises(DegenerateTriangleError):
        TriMeshBody("flat", np.array([[0.0, 0, 0], [1, 0, 0], [2, 0, 0]]), [[0, 1, 2]])


def test_grid_sheet_shape():
    verts, faces = make_grid_sheet(4, 0.5)
    assert len(verts) == 25
    assert len(faces) == 32
    assert np.allclose(verts[:, 2], 0.0)
