"""Layered bounding-sphere hierarchies and the hierarchical blended potential.

Each rigid body gets one binary tree built once in the rest frame. Node
centers are vertex means of the node's (unique) vertex subset, so world
centers are obtained by rigidly transforming rest centers and radii never
change. Radii satisfy the layered bound: a node's sphere contains both
children's spheres.

Evaluation of a body pair walks node pairs depth-first with an explicit
stack. A node pair with center distance r, d1 = R_I + R_J and
d2 = (1+eps) d1 resolves to
  - the closed-form centered potential when r >= d2 (children pruned),
  - the sum over child pairs when r <= d1,
  - the smoothstep blend of the two in between.
Leaf pairs blend the exact separating-plane potential with the centered
one at the leaf spheres' scale.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field

import numpy as np

from . import plane_batch
from .blending import smoothstep, smoothstep_d1, smoothstep_d2
from .evals import PotentialEval, sum_evals
from .geometry import SystemState, TriMeshBody
from .pair_potential import (
    NotSeparableError,
    centered_potential,
    centered_value,
    pair_potential,
    solve_separating_plane,
)


@dataclass
class InteractionCounts:
    exact_terms: int = 0
    centered_terms: int = 0

    @property
    def total(self) -> int:
        return self.exact_terms + self.centered_terms

    def add(self, other: "InteractionCounts") -> None:
        self.exact_terms += other.exact_terms
        self.centered_terms += other.centered_terms


@dataclass
class BshTree:
    """Flat binary tree over one body's triangles (rest frame)."""

    left: np.ndarray
    right: np.ndarray
    tri: np.ndarray  # leaf triangle id, -1 for internal nodes
    center_rest: np.ndarray  # (nodes, 3) vertex-subset means
    radius: np.ndarray
    subsets: list  # sorted unique vertex-id array per node
    max_leaf_radius: np.ndarray
    root: int
    epsilon: float = 0.1

    @property
    def num_nodes(self) -> int:
        return len(self.left)

    def is_leaf(self, i: int) -> bool:
        return self.left[i] < 0

    def children(self, i: int):
        """C(I): the node itself for leaves, else its two children."""
        if self.left[i] < 0:
            return (i,)
        return (int(self.left[i]), int(self.right[i]))

    def depth(self) -> int:
        depths = np.zeros(self.num_nodes, dtype=int)
        for i in range(self.num_nodes):  # children are created before parents
            if self.left[i] >= 0:
                depths[i] = 1 + max(depths[self.left[i]], depths[self.right[i]])
        return int(depths[self.root]) + 1

    def world_centers(self, pose) -> np.ndarray:
        return pose.apply(self.center_rest)


def build_bsh(body: TriMeshBody, epsilon: float = 0.1, knn: int = 8) -> BshTree:
    """Greedy bottom-up agglomeration, merging the candidate root pair whose
    merged layered sphere is smallest; candidates come from a k-nearest cut.
    """
    if body.num_triangles < 1:
        raise ValueError(f"{body.name}: cannot build a hierarchy for an empty mesh")
    verts = body.rest_vertices
    ntri = body.num_triangles

    left = [-1] * ntri
    right = [-1] * ntri
    tri = list(range(ntri))
    subsets = [np.sort(np.unique(body.triangles[i])) for i in range(ntri)]
    centers = [verts[s].mean(axis=0) for s in subsets]
    radii = [
        float(np.max(np.linalg.norm(verts[body.triangles[i]] - centers[i], axis=1)))
        for i in range(ntri)
    ]
    max_leaf = list(radii)

    alive = [True] * ntri
    active: set[int] = set(range(ntri))

    def merged_radius_score(i: int, j: int) -> float:
        # weighted-mean center approximation, selection heuristic only
        wi, wj = len(subsets[i]), len(subsets[j])
        c = (wi * centers[i] + wj * centers[j]) / (wi + wj)
        return max(
            float(np.linalg.norm(c - centers[i])) + radii[i],
            float(np.linalg.norm(c - centers[j])) + radii[j],
        )

    heap: list = []
    # nearest-neighbour candidates come from a periodically rebuilt KD-tree
    # snapshot plus a brute-force pass over nodes created since the snapshot
    from scipy.spatial import cKDTree

    snap_ids = np.arange(ntri)
    snap_tree = cKDTree(np.asarray(centers))
    recent: list[int] = []
    rebuild_period = max(64, ntri // 16)

    def rebuild_snapshot() -> None:
        nonlocal snap_ids, snap_tree, recent
        snap_ids = np.fromiter(active, dtype=int)
        snap_tree = cKDTree(np.asarray([centers[i] for i in snap_ids]))
        recent = []

    def push_candidates(i: int) -> None:
        cand: set[int] = set()
        if len(snap_ids):
            k = min(knn + 4, len(snap_ids))
            _, idx = snap_tree.query(centers[i], k=k)
            for j in np.atleast_1d(idx):
                j = int(snap_ids[j])
                if j != i and alive[j]:
                    cand.add(j)
        for j in recent:
            if j != i and alive[j]:
                cand.add(j)
        if not cand:
            return
        cand_list = sorted(cand)
        d = [float(np.linalg.norm(centers[j] - centers[i])) for j in cand_list]
        order = np.argsort(d)[:knn]
        for oi in order:
            j = cand_list[int(oi)]
            heapq.heappush(heap, (merged_radius_score(i, j), i, j))

    for i in range(ntri):
        push_candidates(i)

    while len(active) > 1:
        if not heap:
            rebuild_snapshot()
            for i in list(active):
                push_candidates(i)
        score, i, j = heapq.heappop(heap)
        if not (alive[i] and alive[j]):
            continue
        sub = np.union1d(subsets[i], subsets[j])
        c = verts[sub].mean(axis=0)
        r = max(
            float(np.linalg.norm(c - centers[i])) + radii[i],
            float(np.linalg.norm(c - centers[j])) + radii[j],
        )
        node = len(left)
        left.append(i)
        right.append(j)
        tri.append(-1)
        subsets.append(sub)
        centers.append(c)
        radii.append(r)
        max_leaf.append(max(max_leaf[i], max_leaf[j]))
        alive[i] = alive[j] = False
        alive.append(True)
        active.discard(i)
        active.discard(j)
        active.add(node)
        recent.append(node)
        if len(recent) >= rebuild_period:
            rebuild_snapshot()
        if len(active) > 1:
            push_candidates(node)

    return BshTree(
        left=np.array(left),
        right=np.array(right),
        tri=np.array(tri),
        center_rest=np.array(centers),
        radius=np.array(radii),
        subsets=subsets,
        max_leaf_radius=np.array(max_leaf),
        root=int(next(iter(active))),
        epsilon=epsilon,
    )


def check_tree_invariants(tree: BshTree, body: TriMeshBody) -> None:
    """Exhaustive scan of the layered-hierarchy invariants (test helper)."""
    verts = body.rest_vertices
    seen = np.zeros(body.num_triangles, dtype=int)
    for i in range(tree.num_nodes):
        sub = tree.subsets[i]
        c = tree.center_rest[i]
        np.testing.assert_allclose(c, verts[sub].mean(axis=0), atol=1e-12)
        vert_bound = np.max(np.linalg.norm(verts[sub] - c, axis=1))
        assert tree.radius[i] >= vert_bound - 1e-10
        if tree.left[i] >= 0:
            l, r = int(tree.left[i]), int(tree.right[i])
            assert np.array_equal(sub, np.union1d(tree.subsets[l], tree.subsets[r]))
            for ch in (l, r):
                gap = np.linalg.norm(c - tree.center_rest[ch]) + tree.radius[ch]
                assert tree.radius[i] >= gap - 1e-10
        else:
            seen[tree.tri[i]] += 1
    assert np.all(seen == 1), "each triangle must appear in exactly one leaf"


class _PairStruct:
    """State-independent structure of one node pair: supports, embedding
    positions, and mean-distribution weights (cached across evaluations)."""

    __slots__ = (
        "d1", "d2", "sup", "count_i", "count_j", "sigma", "sigma2",
        "children", "child_pos3", "leaf", "perm", "cperm", "n",
    )

    def __init__(self, ev, ia, ib):
        ta, tb = ev.ta, ev.tb
        self.d1 = float(ta.radius[ia] + tb.radius[ib])
        self.d2 = (1.0 + ev.eps) * self.d1
        mi = ta.subsets[ia]
        mj = tb.subsets[ib] + ev.off_b
        self.sup = np.concatenate([mi, mj])  # sorted: all a-ids < all b-ids
        self.n = len(self.sup)
        self.count_i = len(mi)
        self.count_j = len(mj)
        self.sigma = np.concatenate(
            [np.full(self.count_i, 1.0 / self.count_i),
             np.full(self.count_j, -1.0 / self.count_j)]
        )
        self.sigma2 = np.outer(self.sigma, self.sigma)
        self.leaf = ta.is_leaf(ia) and tb.is_leaf(ib)
        if self.leaf:
            fa = ev.tris_a[ta.tri[ia]]
            fb = ev.tris_b[tb.tri[ib]] + ev.off_b
            ids = np.concatenate([fa, fb])
            self.perm = np.argsort(ids, kind="stable")
            self.cperm = (3 * self.perm[:, None] + np.arange(3)).ravel()
            self.children = ()
            self.child_pos3 = ()
        else:
            self.perm = self.cperm = None
            self.children = tuple(
                (ca, cb) for ca in ta.children(ia) for cb in tb.children(ib)
            )
            pos_list = []
            for ca, cb in self.children:
                child_sup = np.concatenate([ta.subsets[ca], tb.subsets[cb] + ev.off_b])
                pos = np.searchsorted(self.sup, child_sup)
                pos_list.append((pos, (3 * pos[:, None] + np.arange(3)).ravel()))
            self.child_pos3 = tuple(pos_list)


class _Frame:
    __slots__ = ("ia", "ib", "stage", "struct", "results", "k", "result")

    def __init__(self, ia, ib):
        self.ia = ia
        self.ib = ib
        self.stage = 0
        self.struct = None
        self.results = []
        self.k = 0


_INFINITE = (float("inf"), None, None, True)


class _PairEvaluator:
    """Evaluates the blended potential between two bodies' trees.

    Vertex ids are combined-local: body A keeps its ids, body B's ids are
    offset by A's vertex count. The caller re-maps to global ids. Results
    travel the recursion as (value, grad (n,3), hess (3n,3n), infinite)
    tuples in each node pair's own support order.
    """

    def __init__(self, tree_a, tree_b, va, vb, ca, cb, body_a, body_b,
                 order, prune, counts, plane_cache=None, cache_key=None,
                 struct_cache=None):
        self.ta, self.tb = tree_a, tree_b
        self.va, self.vb = va, vb
        self.ca, self.cb = ca, cb  # world node centers
        self.tris_a, self.tris_b = body_a.triangles, body_b.triangles
        self.off_b = body_a.num_vertices
        self.order = order
        self.prune = prune
        self.counts = counts
        self.eps = tree_a.epsilon
        self.plane_cache = plane_cache
        self.cache_key = cache_key
        self.struct_cache = struct_cache if struct_cache is not None else {}
        self._leaf_raw: dict = {}

    def _struct(self, ia, ib) -> _PairStruct:
        key = (self.cache_key, ia, ib)
        st = self.struct_cache.get(key)
        if st is None:
            st = _PairStruct(self, ia, ib)
            self.struct_cache[key] = st
        return st

    # -- centered potential over a node pair's support -------------------
    def _centered(self, st, r, delta):
        self.counts.centered_terms += 1
        val, f1, f2 = centered_value(r, self.order)
        if self.order == 0:
            return (val, None, None, False)
        u = delta / r
        grad = np.outer(st.sigma, f1 * u)
        if self.order == 1:
            return (val, grad, None, False)
        radial = f2 * np.outer(u, u) + (f1 / r) * (np.eye(3) - np.outer(u, u))
        hess = np.kron(st.sigma2, radial)
        return (val, grad, hess, False)

    # -- exact leaf potential (batched upstream) --------------------------
    def _leaf_exact(self, ia, ib, st):
        self.counts.exact_terms += 1
        raw = self._leaf_raw.pop((ia, ib), None)
        if raw is None:
            raw = self._leaf_scalar(ia, ib)
        value, grad, hess, infinite = raw
        if infinite:
            return _INFINITE
        if self.order == 0:
            return (value, None, None, False)
        grad = grad[st.perm]
        if self.order == 1:
            return (value, grad, None, False)
        return (value, grad, hess[np.ix_(st.cperm, st.cperm)], False)

    def _leaf_scalar(self, ia, ib):
        """Fallback single-pair solve in listed-vertex order."""
        fa = self.tris_a[self.ta.tri[ia]]
        fb = self.tris_b[self.tb.tri[ib]]
        tri_a, tri_b = self.va[fa], self.vb[fb]
        key = init = None
        if self.plane_cache is not None:
            key = (self.cache_key, int(self.ta.tri[ia]), int(self.tb.tri[ib]))
            init = self.plane_cache.get(key)
        try:
            plane = solve_separating_plane(tri_a, tri_b, init=init)
        except NotSeparableError:
            return _INFINITE
        if key is not None:
            self.plane_cache[key] = np.concatenate([plane.n, [plane.d]])
        if self.order == 0:
            return (plane.value, None, None, False)
        grads, hesses = plane_batch.batch_pair_derivatives(
            tri_a[None], tri_b[None], [plane], self.order
        )
        return (plane.value, grads[0], hesses[0] if hesses is not None else None, False)

    def _collect_leaf_pairs(self, ia, ib):
        """Structural pre-pass mirroring run()'s gating: every leaf pair
        that will need an exact plane solve."""
        pairs = []
        stack = [(ia, ib)]
        while stack:
            i, j = stack.pop()
            st = self._struct(i, j)
            delta = self.ca[i] - self.cb[j]
            r = float(np.sqrt(delta @ delta))
            if self.prune and r >= st.d2:
                continue
            if st.leaf:
                pairs.append((i, j))
                continue
            stack.extend(st.children)
        return pairs

    def _prepare_leaves(self, ia, ib):
        """Batch-solve all exact leaf pairs reachable from (ia, ib)."""
        pairs = self._collect_leaf_pairs(ia, ib)
        if len(pairs) < 2:
            return
        kk = len(pairs)
        va = np.empty((kk, 3, 3))
        vb = np.empty((kk, 3, 3))
        keys = []
        init = np.full((kk, 4), np.nan)
        for r, (i, j) in enumerate(pairs):
            fa = self.tris_a[self.ta.tri[i]]
            fb = self.tris_b[self.tb.tri[j]]
            va[r] = self.va[fa]
            vb[r] = self.vb[fb]
            key = None
            if self.plane_cache is not None:
                key = (self.cache_key, int(self.ta.tri[i]), int(self.tb.tri[j]))
                got = self.plane_cache.get(key)
                if got is not None:
                    init[r] = got
            keys.append(key)
        planes, separable = plane_batch.solve_planes_batch(va, vb, init=init)
        ok = np.flatnonzero(separable)
        grads = hesses = None
        if self.order >= 1 and len(ok):
            grads, hesses = plane_batch.batch_pair_derivatives(
                va[ok], vb[ok], [planes[i] for i in ok], self.order
            )
        pos = {int(i): r for r, i in enumerate(ok)}
        for r, (i, j) in enumerate(pairs):
            if not separable[r]:
                self._leaf_raw[(i, j)] = _INFINITE
                continue
            plane = planes[r]
            if keys[r] is not None:
                self.plane_cache[keys[r]] = np.concatenate([plane.n, [plane.d]])
            if self.order == 0:
                self._leaf_raw[(i, j)] = (plane.value, None, None, False)
            else:
                rr = pos[r]
                self._leaf_raw[(i, j)] = (
                    plane.value,
                    grads[rr],
                    hesses[rr] if hesses is not None else None,
                    False,
                )

    # -- blending ---------------------------------------------------------
    def _blend(self, st, near, far, phi, s_param, r, delta):
        if phi <= 0.0:
            return near
        if phi >= 1.0:
            return far
        v1, g1, h1, inf1 = near
        v2, g2, h2, _ = far
        if inf1:
            raise AssertionError(
                "infinite near potential inside the blend band: the "
                "R_I + R_J <= d1 gate was violated"
            )
        width = st.d2 - st.d1
        value = (1.0 - phi) * v1 + phi * v2
        if self.order == 0:
            return (value, None, None, False)
        dphi_dr = smoothstep_d1(s_param) / width
        u = delta / r
        grad_r = np.outer(st.sigma, u)
        diff = v2 - v1
        grad = (1.0 - phi) * g1 + phi * g2 + (diff * dphi_dr) * grad_r
        if self.order == 1:
            return (value, grad, None, False)
        gphi = (dphi_dr * grad_r).ravel()
        gdiff = (g2 - g1).ravel()
        hess = (1.0 - phi) * h1 + phi * h2
        hess += np.outer(gphi, gdiff) + np.outer(gdiff, gphi)
        d2phi = smoothstep_d2(s_param) / (width * width)
        gr = grad_r.ravel()
        perp = (np.eye(3) - np.outer(u, u)) / r
        hess += diff * (d2phi * np.outer(gr, gr) + dphi_dr * np.kron(st.sigma2, perp))
        return (value, grad, hess, False)

    # -- recursion ---------------------------------------------------------
    def run(self, ia, ib) -> PotentialEval:
        self._prepare_leaves(ia, ib)
        stack = [_Frame(ia, ib)]
        final = None
        while stack:
            fr = stack[-1]
            if fr.stage == 0:
                fr.stage = 1
                st = fr.struct = self._struct(fr.ia, fr.ib)
                delta = self.ca[fr.ia] - self.cb[fr.ib]
                r = float(np.sqrt(delta @ delta))
                s_param = (r - st.d1) / (st.d2 - st.d1)
                phi = smoothstep(s_param)
                if self.prune and phi >= 1.0:
                    fr.result = self._centered(st, r, delta)
                    fr.stage = 2
                elif st.leaf:
                    near = self._leaf_exact(fr.ia, fr.ib, st)
                    far = self._centered(st, r, delta) if phi > 0.0 else None
                    fr.result = self._blend(st, near, far, phi, s_param, r, delta)
                    fr.stage = 2
            if fr.stage == 1:
                st = fr.struct
                if fr.k < len(st.children):
                    ca, cb = st.children[fr.k]
                    fr.k += 1
                    stack.append(_Frame(ca, cb))
                    continue
                fr.result = self._combine(fr)
                fr.stage = 2
            stack.pop()
            if stack:
                stack[-1].results.append(fr.result)
            else:
                final = fr.result
        return final

    def _combine(self, fr):
        st = fr.struct
        value = 0.0
        grad = hess = None
        if self.order >= 1:
            grad = np.zeros((st.n, 3))
        if self.order >= 2:
            hess = np.zeros((3 * st.n, 3 * st.n))
        for res, (pos, cpos) in zip(fr.results, st.child_pos3):
            v, gchild, hchild, inf = res
            if inf:
                return _INFINITE
            value += v
            if grad is not None:
                grad[pos] += gchild
            if hess is not None:
                hess[np.ix_(cpos, cpos)] += hchild
        near = (value, grad, hess, False)
        delta = self.ca[fr.ia] - self.cb[fr.ib]
        r = float(np.sqrt(delta @ delta))
        s_param = (r - st.d1) / (st.d2 - st.d1)
        phi = smoothstep(s_param)
        if phi <= 0.0:
            return near
        far = self._centered(st, r, delta)
        return self._blend(st, near, far, phi, s_param, r, delta)


def process_pair(
    state: SystemState,
    trees: list,
    a: int,
    b: int,
    order: int = 2,
    prune: bool = True,
    counts: InteractionCounts | None = None,
    plane_cache: dict | None = None,
    struct_cache: dict | None = None,
    exact_centers: bool = False,
) -> PotentialEval:
    """Blended potential between bodies a and b (combined-local vertex ids).

    Node centers are vertex-subset means; for rigid states the cached
    rest-frame means transform exactly, while ``exact_centers`` recomputes
    them from the current world vertices (needed when differentiating with
    respect to individual vertex coordinates).
    """
    if counts is None:
        counts = InteractionCounts()
    ta, tb = trees[a], trees[b]
    if exact_centers:
        ca = np.array([state.world(a)[s].mean(axis=0) for s in ta.subsets])
        cb = np.array([state.world(b)[s].mean(axis=0) for s in tb.subsets])
    else:
        ca = ta.world_centers(state.poses[a])
        cb = tb.world_centers(state.poses[b])
    ev = _PairEvaluator(
        ta,
        tb,
        state.world(a),
        state.world(b),
        ca,
        cb,
        state.bodies[a],
        state.bodies[b],
        order,
        prune,
        counts,
        plane_cache=plane_cache,
        cache_key=(a, b),
        struct_cache=struct_cache,
    )
    value, grad, hess, infinite = ev.run(ta.root, tb.root)
    sup = ev._struct(ta.root, tb.root).sup
    if infinite:
        return PotentialEval.infinite_eval(sup)
    return PotentialEval(value, sup, grad, hess)


def total_potential(
    state: SystemState,
    trees: list,
    order: int = 2,
    prune: bool = True,
    counts: InteractionCounts | None = None,
    plane_cache: dict | None = None,
    struct_cache: dict | None = None,
    exact_centers: bool = False,
) -> PotentialEval:
    """Sum of root-pair potentials over all unordered body pairs.

    Vertex ids in the result are global (body vertex offsets applied).
    Returns the infinite sentinel as soon as any pair is non-separable.
    """
    if counts is None:
        counts = InteractionCounts()
    n = state.num_bodies
    offsets = [state.vertex_offset(b) for b in range(n)]
    pair_evals = []
    supports = []
    for a in range(n):
        for b in range(a + 1, n):
            ev = process_pair(
                state, trees, a, b, order=order, prune=prune, counts=counts,
                plane_cache=plane_cache, struct_cache=struct_cache,
                exact_centers=exact_centers,
            )
            # combined-local -> global vertex ids (order preserved: a block, b block)
            na = state.bodies[a].num_vertices
            ids = ev.support.copy()
            is_b = ids >= na
            ids[~is_b] += offsets[a]
            ids[is_b] += offsets[b] - na
            ev = PotentialEval(ev.value, ids, ev.grad, ev.hess, ev.infinite)
            pair_evals.append(ev)
            supports.append(ids)
    if not pair_evals:
        return PotentialEval.zero(np.arange(0), order)
    union = np.unique(np.concatenate(supports))
    return sum_evals(pair_evals, union, order)


def count_interactions(state: SystemState, trees: list, prune: bool = True):
    """(exact_terms, centered_terms) for one full potential evaluation."""
    counts = InteractionCounts()
    total_potential(state, trees, order=0, prune=prune, counts=counts)
    return counts.exact_terms, counts.centered_terms


def collect_close_leaf_pairs(state: SystemState, trees: list, a: int, b: int):
    """Leaf pairs whose centers are within their own d2 = (1+eps)(R_i+R_j).

    Conservative sphere-bound pruning; used to gather friction stencils.
    Returns a list of (triangle_id_a, triangle_id_b).
    """
    ta, tb = trees[a], trees[b]
    ca = ta.world_centers(state.poses[a])
    cb = tb.world_centers(state.poses[b])
    eps = ta.epsilon
    out = []
    stack = [(ta.root, tb.root)]
    while stack:
        ia, ib = stack.pop()
        r = float(np.linalg.norm(ca[ia] - cb[ib]))
        reach = (1.0 + eps) * (ta.max_leaf_radius[ia] + tb.max_leaf_radius[ib])
        if r - ta.radius[ia] - tb.radius[ib] >= reach:
            continue
        if ta.is_leaf(ia) and tb.is_leaf(ib):
            if r < (1.0 + eps) * (ta.radius[ia] + tb.radius[ib]):
                out.append((int(ta.tri[ia]), int(tb.tri[ib])))
            continue
        for ca_i in ta.children(ia):
            for cb_i in tb.children(ib):
                stack.append((ca_i, cb_i))
    return out


def leaf_blend_weight(tree_a, tree_b, ia, ib, ca, cb) -> float:
    d1 = float(tree_a.radius[ia] + tree_b.radius[ib])
    r = float(np.linalg.norm(ca - cb))
    return smoothstep((r - d1) / (tree_a.epsilon * d1))
