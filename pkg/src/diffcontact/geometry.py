"""Rigid-body meshes, pose kinematics, and exact geometric predicates.

The exact triangle-triangle distance here is oracle-grade (full enumeration
of vertex-face and edge-edge candidates plus piercing tests) and is used by
tests, by ``min_pair_distance``, and to seed the separating-plane solver
with a strictly feasible plane. It is deliberately not used inside the
hierarchical potential evaluation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import so3

INF_DISTANCE = float("inf")
_DEGENERATE_AREA = 1e-12  # m^2


class DegenerateTriangleError(ValueError):
    pass


# ---------------------------------------------------------------------------
# bodies, poses, states


@dataclass
class Pose:
    translation: np.ndarray
    rotation: np.ndarray  # 3x3 matrix

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.zeros(3), np.eye(3))

    def copy(self) -> "Pose":
        return Pose(self.translation.copy(), self.rotation.copy())

    def apply(self, pts: np.ndarray) -> np.ndarray:
        return pts @ self.rotation.T + self.translation

    def quaternion(self) -> np.ndarray:
        return so3.rotmat_to_quat(self.rotation)


@dataclass
class TriMeshBody:
    """A rigid body: rest-frame vertices, triangles, mass properties."""

    name: str
    rest_vertices: np.ndarray  # (V, 3)
    triangles: np.ndarray  # (T, 3) int
    mass: float = 1.0
    inertia: np.ndarray = field(default_factory=lambda: np.eye(3))
    com_rest: np.ndarray = field(default_factory=lambda: np.zeros(3))
    static: bool = False

    def __post_init__(self):
        self.rest_vertices = np.asarray(self.rest_vertices, dtype=float)
        self.triangles = np.asarray(self.triangles, dtype=int)
        self.inertia = np.asarray(self.inertia, dtype=float)
        self.com_rest = np.asarray(self.com_rest, dtype=float)
        if self.triangles.ndim != 2 or self.triangles.shape[1] != 3:
            raise ValueError("triangles must be (T, 3)")
        if self.triangles.min(initial=0) < 0 or self.triangles.max(initial=-1) >= len(
            self.rest_vertices
        ):
            raise ValueError(f"{self.name}: triangle index out of range")
        areas = triangle_areas(self.rest_vertices, self.triangles)
        if np.any(areas <= _DEGENERATE_AREA):
            bad = int(np.argmin(areas))
            raise DegenerateTriangleError(
                f"{self.name}: triangle {bad} has area {areas[bad]:.3e}"
            )

    @property
    def num_vertices(self) -> int:
        return len(self.rest_vertices)

    @property
    def num_triangles(self) -> int:
        return len(self.triangles)


def triangle_areas(vertices: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    a = vertices[triangles[:, 0]]
    b = vertices[triangles[:, 1]]
    c = vertices[triangles[:, 2]]
    return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)


def world_vertices(body: TriMeshBody, pose: Pose) -> np.ndarray:
    """World positions of all body vertices under the given pose."""
    return pose.apply(body.rest_vertices)


@dataclass
class SystemState:
    """Poses for every body plus derived world-frame vertices."""

    bodies: list
    poses: list
    t: int = 0

    def __post_init__(self):
        self._world = None

    def world(self, b: int) -> np.ndarray:
        if self._world is None:
            self._world = [world_vertices(bd, p) for bd, p in zip(self.bodies, self.poses)]
        return self._world[b]

    def copy_with_poses(self, poses, t=None) -> "SystemState":
        return SystemState(self.bodies, [p.copy() for p in poses], self.t if t is None else t)

    @property
    def num_bodies(self) -> int:
        return len(self.bodies)

    def vertex_offset(self, b: int) -> int:
        off = 0
        for i in range(b):
            off += self.bodies[i].num_vertices
        return off

    def total_vertices(self) -> int:
        return sum(bd.num_vertices for bd in self.bodies)


# ---------------------------------------------------------------------------
# exact closest-point machinery


def closest_point_on_triangle(p: np.ndarray, tri: np.ndarray) -> np.ndarray:
    """Closest point to p on triangle tri (3,3). Ericson's region walk."""
    a, b, c = tri
    ab, ac, ap = b - a, c - a, p - a
    d1, d2 = ab @ ap, ac @ ap
    if d1 <= 0 and d2 <= 0:
        return a
    bp = p - b
    d3, d4 = ab @ bp, ac @ bp
    if d3 >= 0 and d4 <= d3:
        return b
    vc = d1 * d4 - d3 * d2
    if vc <= 0 and d1 >= 0 and d3 <= 0:
        v = d1 / (d1 - d3)
        return a + v * ab
    cp = p - c
    d5, d6 = ab @ cp, ac @ cp
    if d6 >= 0 and d5 <= d6:
        return c
    vb = d5 * d2 - d1 * d6
    if vb <= 0 and d2 >= 0 and d6 <= 0:
        w = d2 / (d2 - d6)
        return a + w * ac
    va = d3 * d6 - d5 * d4
    if va <= 0 and (d4 - d3) >= 0 and (d5 - d6) >= 0:
        w = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        return b + w * (c - b)
    denom = 1.0 / (va + vb + vc)
    v = vb * denom
    w = vc * denom
    return a + ab * v + ac * w


def closest_points_segments(p1, q1, p2, q2):
    """Closest points between segments [p1,q1] and [p2,q2] (clamped)."""
    d1 = q1 - p1
    d2 = q2 - p2
    r = p1 - p2
    a = d1 @ d1
    e = d2 @ d2
    f = d2 @ r
    tiny = 1e-15
    if a <= tiny and e <= tiny:
        return p1, p2
    if a <= tiny:
        s = 0.0
        t = np.clip(f / e, 0.0, 1.0)
    else:
        c = d1 @ r
        if e <= tiny:
            t = 0.0
            s = np.clip(-c / a, 0.0, 1.0)
        else:
            b = d1 @ d2
            denom = a * e - b * b
            s = np.clip((b * f - c * e) / denom, 0.0, 1.0) if denom > tiny else 0.0
            t = (b * s + f) / e
            if t < 0.0:
                t = 0.0
                s = np.clip(-c / a, 0.0, 1.0)
            elif t > 1.0:
                t = 1.0
                s = np.clip((b - c) / a, 0.0, 1.0)
    return p1 + s * d1, p2 + t * d2


def _segment_pierces_triangle(p, q, tri) -> bool:
    """True if the open segment crosses the triangle's interior plane region."""
    a, b, c = tri
    n = np.cross(b - a, c - a)
    dp = n @ (p - a)
    dq = n @ (q - a)
    if dp * dq > 0:
        return False
    denom = dp - dq
    if abs(denom) < 1e-15:
        return False  # coplanar; edge-edge / vertex-face candidates handle it
    t = dp / denom
    x = p + t * (q - p)
    # barycentric inside-test with slack toward inclusion
    v0, v1, v2 = b - a, c - a, x - a
    d00, d01, d11 = v0 @ v0, v0 @ v1, v1 @ v1
    d20, d21 = v2 @ v0, v2 @ v1
    det = d00 * d11 - d01 * d01
    if det <= 0:
        return False
    u = (d11 * d20 - d01 * d21) / det
    v = (d00 * d21 - d01 * d20) / det
    return u >= -1e-12 and v >= -1e-12 and (u + v) <= 1.0 + 1e-12


def triangle_pair_closest(tri_a: np.ndarray, tri_b: np.ndarray):
    """Exact distance and witness points between two triangles.

    Enumerates the 6 vertex-face and 9 edge-edge candidates and checks the
    6 edge-face piercings (which force distance 0 for interlocking pairs).
    Returns (distance, point_on_a, point_on_b).
    """
    tri_a = np.asarray(tri_a, dtype=float)
    tri_b = np.asarray(tri_b, dtype=float)
    edges_a = [(tri_a[0], tri_a[1]), (tri_a[1], tri_a[2]), (tri_a[2], tri_a[0])]
    edges_b = [(tri_b[0], tri_b[1]), (tri_b[1], tri_b[2]), (tri_b[2], tri_b[0])]
    for p, q in edges_a:
        if _segment_pierces_triangle(p, q, tri_b):
            mid = 0.5 * (p + q)
            return 0.0, mid, mid
    for p, q in edges_b:
        if _segment_pierces_triangle(p, q, tri_a):
            mid = 0.5 * (p + q)
            return 0.0, mid, mid
    best = (INF_DISTANCE, None, None)
    for v in tri_a:
        c = closest_point_on_triangle(v, tri_b)
        d = float(np.linalg.norm(v - c))
        if d < best[0]:
            best = (d, v.copy(), c)
    for v in tri_b:
        c = closest_point_on_triangle(v, tri_a)
        d = float(np.linalg.norm(v - c))
        if d < best[0]:
            best = (d, c, v.copy())
    for p1, q1 in edges_a:
        for p2, q2 in edges_b:
            ca, cb = closest_points_segments(p1, q1, p2, q2)
            d = float(np.linalg.norm(ca - cb))
            if d < best[0]:
                best = (d, ca, cb)
    return best


def triangle_pair_distance(tri_a: np.ndarray, tri_b: np.ndarray) -> float:
    return triangle_pair_closest(tri_a, tri_b)[0]


@dataclass
class SeparationCertificate:
    """Disjointness certificate for a pair of triangles (closed hulls)."""

    disjoint: bool
    distance: float
    witness_plane: tuple | None  # (unit normal, offset): <x,n>+d > 0 on side A
    witness_point: np.ndarray | None  # a common/closest point when not disjoint


def triangles_disjoint(
    tri_a: np.ndarray, tri_b: np.ndarray, slack: float = 1e-12
) -> SeparationCertificate:
    """Exact (up to slack) disjointness of the closed convex hulls."""
    for tri in (tri_a, tri_b):
        a, b, c = np.asarray(tri, dtype=float)
        if 0.5 * np.linalg.norm(np.cross(b - a, c - a)) <= _DEGENERATE_AREA:
            raise DegenerateTriangleError("degenerate triangle in disjointness test")
    dist, pa, pb = triangle_pair_closest(tri_a, tri_b)
    if dist <= slack:
        return SeparationCertificate(False, dist, None, 0.5 * (pa + pb))
    normal = (pa - pb) / dist
    offset = -float(normal @ (0.5 * (pa + pb)))
    return SeparationCertificate(True, dist, (normal, offset), None)


def min_pair_distance(state: SystemState) -> float:
    """Minimum triangle-triangle distance over all inter-body pairs.

    Exact: every pair whose sphere-bound lower bound beats the running
    minimum is evaluated with the full enumeration. +inf for fewer than
    two bodies. Oracle/acceptance use only.
    """
    n = state.num_bodies
    if n < 2:
        return INF_DISTANCE
    best = INF_DISTANCE
    for a in range(n):
        va = state.world(a)
        ta = state.bodies[a].triangles
        tris_a = va[ta]  # (Ta, 3, 3)
        ca = tris_a.mean(axis=1)
        ra = np.linalg.norm(tris_a - ca[:, None, :], axis=2).max(axis=1)
        for b in range(a + 1, n):
            vb = state.world(b)
            tb = state.bodies[b].triangles
            tris_b = vb[tb]
            cb = tris_b.mean(axis=1)
            rb = np.linalg.norm(tris_b - cb[:, None, :], axis=2).max(axis=1)
            lower = (
                np.linalg.norm(ca[:, None, :] - cb[None, :, :], axis=2)
                - ra[:, None]
                - rb[None, :]
            )
            order = np.argsort(lower, axis=None)
            flat = lower.ravel()
            nb_t = len(tb)
            for idx in order:
                if flat[idx] >= best:
                    break
                ia, ib = divmod(int(idx), nb_t)
                d = triangle_pair_distance(tris_a[ia], tris_b[ib])
                if d < best:
                    best = d
                    if best == 0.0:
                        return 0.0
    return best


# ---------------------------------------------------------------------------
# mesh generation and OBJ I/O


def make_box(extents=(1.0, 1.0, 1.0)) -> tuple[np.ndarray, np.ndarray]:
    """Axis-aligned box centered at the origin; 8 vertices, 12 triangles."""
    hx, hy, hz = np.asarray(extents, dtype=float) * 0.5
    v = np.array(
        [
            [-hx, -hy, -hz],
            [hx, -hy, -hz],
            [hx, hy, -hz],
            [-hx, hy, -hz],
            [-hx, -hy, hz],
            [hx, -hy, hz],
            [hx, hy, hz],
            [-hx, hy, hz],
        ]
    )
    f = np.array(
        [
            [0, 2, 1], [0, 3, 2],  # bottom
            [4, 5, 6], [4, 6, 7],  # top
            [0, 1, 5], [0, 5, 4],  # -y
            [2, 3, 7], [2, 7, 6],  # +y
            [1, 2, 6], [1, 6, 5],  # +x
            [3, 0, 4], [3, 4, 7],  # -x
        ]
    )
    return v, f


def make_icosphere(radius: float = 0.5, subdivisions: int = 1):
    """Icosahedron subdivided and projected onto a sphere."""
    t = (1.0 + np.sqrt(5.0)) / 2.0
    v = np.array(
        [
            [-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
            [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
            [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1],
        ],
        dtype=float,
    )
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    f = np.array(
        [
            [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
            [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
            [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
            [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
        ]
    )
    for _ in range(subdivisions):
        verts = list(v)
        cache: dict = {}

        def midpoint(i, j):
            key = (min(i, j), max(i, j))
            if key not in cache:
                m = verts[i] + verts[j]
                m /= np.linalg.norm(m)
                cache[key] = len(verts)
                verts.append(m)
            return cache[key]

        new_f = []
        for a, b, c in f:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_f += [[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]
        v = np.array(verts)
        f = np.array(new_f)
    return v * radius, f


def make_octahedron(radius: float = 0.5, face_down: bool = False):
    """Octahedron with circumradius ``radius``; optionally rotated so a
    face rests flat against z = const (stable resting orientation)."""
    v = radius * np.array(
        [[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]],
        dtype=float,
    )
    f = np.array(
        [[0, 2, 4], [2, 1, 4], [1, 3, 4], [3, 0, 4],
         [2, 0, 5], [1, 2, 5], [3, 1, 5], [0, 3, 5]]
    )
    if face_down:
        from . import so3

        n = np.array([1.0, 1.0, 1.0]) / np.sqrt(3.0)
        axis = np.cross(n, [0.0, 0.0, -1.0])
        axis /= np.linalg.norm(axis)
        angle = np.arccos(np.dot(n, [0.0, 0.0, -1.0]))
        v = v @ so3.exp_so3(axis * angle).T
    return v, f


def make_uv_sphere(radius: float, rows: int, cols: int):
    """Latitude/longitude sphere with 2*cols*(rows-1) triangles."""
    if rows < 2 or cols < 3:
        raise ValueError("uv sphere needs rows >= 2 and cols >= 3")
    verts = [np.array([0.0, 0.0, radius])]
    for i in range(1, rows):
        phi = np.pi * i / rows
        for j in range(cols):
            lam = 2 * np.pi * j / cols
            verts.append(
                radius
                * np.array(
                    [np.sin(phi) * np.cos(lam), np.sin(phi) * np.sin(lam), np.cos(phi)]
                )
            )
    verts.append(np.array([0.0, 0.0, -radius]))
    south = len(verts) - 1
    faces = []
    for j in range(cols):
        faces.append([0, 1 + j, 1 + (j + 1) % cols])
    for i in range(rows - 2):
        base0 = 1 + i * cols
        base1 = 1 + (i + 1) * cols
        for j in range(cols):
            j1 = (j + 1) % cols
            faces.append([base0 + j, base1 + j, base1 + j1])
            faces.append([base0 + j, base1 + j1, base0 + j1])
    base = 1 + (rows - 2) * cols
    for j in range(cols):
        faces.append([south, base + (j + 1) % cols, base + j])
    return np.array(verts), np.array(faces)


def make_grid_sheet(n_cells: int, cell: float = 1.0):
    """Flat square sheet in the z=0 plane: n x n cells, 2*n^2 triangles.

    Centered at the origin; spans [-n*cell/2, n*cell/2]^2.
    """
    n = n_cells
    half = 0.5 * n * cell
    xs = np.linspace(-half, half, n + 1)
    vx, vy = np.meshgrid(xs, xs, indexing="ij")
    verts = np.column_stack([vx.ravel(), vy.ravel(), np.zeros((n + 1) ** 2)])
    faces = []
    for i in range(n):
        for j in range(n):
            v00 = i * (n + 1) + j
            v10 = (i + 1) * (n + 1) + j
            faces.append([v00, v10, v10 + 1])
            faces.append([v00, v10 + 1, v00 + 1])
    return verts, np.array(faces)


def make_ground_quad(half_extent: float = 2.0, z: float = 0.0):
    v = np.array(
        [
            [-half_extent, -half_extent, z],
            [half_extent, -half_extent, z],
            [half_extent, half_extent, z],
            [-half_extent, half_extent, z],
        ]
    )
    f = np.array([[0, 1, 2], [0, 2, 3]])
    return v, f


def sphere_inertia(mass: float, radius: float) -> np.ndarray:
    return np.eye(3) * (0.4 * mass * radius * radius)


def box_inertia(mass: float, extents) -> np.ndarray:
    ex, ey, ez = np.asarray(extents, dtype=float)
    return np.diag(
        [
            mass / 12.0 * (ey * ey + ez * ez),
            mass / 12.0 * (ex * ex + ez * ez),
            mass / 12.0 * (ex * ex + ey * ey),
        ]
    )


def load_obj(path) -> tuple[np.ndarray, np.ndarray]:
    """Minimal OBJ subset: `v x y z` and `f i j k` with 1-based indices."""
    verts, faces = [], []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            if parts[0] == "v":
                if len(parts) < 4:
                    raise ValueError(f"{path}:{lineno}: vertex needs 3 coordinates")
                verts.append([float(parts[1]), float(parts[2]), float(parts[3])])
            elif parts[0] == "f":
                if len(parts) != 4:
                    raise ValueError(f"{path}:{lineno}: only triangle faces supported")
                faces.append([int(p.split("/")[0]) - 1 for p in parts[1:4]])
    if not verts or not faces:
        raise ValueError(f"{path}: no vertices or faces found")
    return np.array(verts, dtype=float), np.array(faces, dtype=int)


def save_obj(path, vertices: np.ndarray, triangles: np.ndarray) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for v in vertices:
            fh.write(f"v {v[0]:.17g} {v[1]:.17g} {v[2]:.17g}\n")
        for t in triangles:
            fh.write(f"f {t[0] + 1} {t[1] + 1} {t[2] + 1}\n")
