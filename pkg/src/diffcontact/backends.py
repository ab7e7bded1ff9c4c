"""Contact-potential backends sharing one evaluation interface.

``evaluate(state, order, counts)`` returns a PotentialEval over global
vertex ids. The hierarchical backend is the production path; the brute
backend is its oracle twin; the local-baseline backend swaps in a clamped
(locally supported) barrier to reproduce vanishing far-field gradients.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import bsh as bsh_mod
from .barriers import ClampedLogBarrier
from .evals import PotentialEval, sum_evals
from .geometry import SystemState
from .oracles import brute_force_potential, leaf_sphere
from .pair_potential import NotSeparableError, pair_potential, solve_separating_plane


class BshBackend:
    """Hierarchical blended potential; trees are built once per body."""

    name = "bsh"

    def __init__(self, bodies, epsilon: float = 0.1, prune: bool = True, knn: int = 8,
                 threads: int = 1):
        self.epsilon = epsilon
        self.prune = prune
        self.threads = max(1, int(threads))
        self.trees = [bsh_mod.build_bsh(b, epsilon=epsilon, knn=knn) for b in bodies]
        self._plane_cache: dict = {}
        self._struct_cache: dict = {}

    def evaluate(self, state: SystemState, order: int = 2, counts=None,
                 exact_centers: bool = False) -> PotentialEval:
        if self.threads > 1 and state.num_bodies > 2:
            return self._evaluate_parallel(state, order, counts)
        return bsh_mod.total_potential(
            state, self.trees, order=order, prune=self.prune, counts=counts,
            plane_cache=self._plane_cache, struct_cache=self._struct_cache,
            exact_centers=exact_centers,
        )

    def _evaluate_parallel(self, state, order, counts):
        """Body pairs evaluated concurrently; results merged in pair order,
        so the output is identical to the sequential path."""
        from .evals import PotentialEval as PE
        from .evals import sum_evals

        n = state.num_bodies
        pairs = [(a, b) for a in range(n) for b in range(a + 1, n)]
        offsets = [state.vertex_offset(b) for b in range(n)]

        def one(pair):
            a, b = pair
            local = bsh_mod.InteractionCounts()
            ev = bsh_mod.process_pair(
                state, self.trees, a, b, order=order, prune=self.prune,
                counts=local, plane_cache=self._plane_cache,
                struct_cache=self._struct_cache,
            )
            return ev, local, pair

        with ThreadPoolExecutor(max_workers=self.threads) as pool:
            results = list(pool.map(one, pairs))
        evals = []
        for ev, local, (a, b) in results:
            if counts is not None:
                counts.add(local)
            na = state.bodies[a].num_vertices
            ids = ev.support.copy()
            is_b = ids >= na
            ids[~is_b] += offsets[a]
            ids[is_b] += offsets[b] - na
            evals.append(PE(ev.value, ids, ev.grad, ev.hess, ev.infinite))
        if not evals:
            return PE.zero(np.arange(0), order)
        union = np.unique(np.concatenate([e.support for e in evals]))
        return sum_evals(evals, union, order)


class BruteBackend:
    """All-pairs summation with leaf-level blending (no hierarchy)."""

    name = "brute"

    def __init__(self, bodies, epsilon: float = 0.1):
        self.epsilon = epsilon
        self.trees = [bsh_mod.build_bsh(b, epsilon=epsilon) for b in bodies]

    def evaluate(self, state: SystemState, order: int = 2, counts=None) -> PotentialEval:
        ev = brute_force_potential(state, order=order, epsilon=self.epsilon)
        if counts is not None:
            npairs = 0
            for a in range(state.num_bodies):
                for b in range(a + 1, state.num_bodies):
                    npairs += (
                        state.bodies[a].num_triangles * state.bodies[b].num_triangles
                    )
            counts.exact_terms += npairs
        return ev


class LocalBaselineBackend:
    """Locally supported stand-in: the reciprocal barrier inside the plane
    objective is replaced by a clamped log barrier, so every pair term (and
    its gradient) is exactly zero once all margins clear the cutoff.

    Pairs whose hull gap provably exceeds the support range are skipped
    outright (value is identically zero there). The potential is only
    first-order smooth (its inner minimizer is set-valued on flats), so
    steppers must tolerate line-search stagnation: ``nonsmooth`` is True.
    """

    name = "local-baseline"
    nonsmooth = True

    def __init__(self, bodies, delta: float = 0.01, epsilon: float = 0.1):
        self.barrier = ClampedLogBarrier(delta)
        self.delta = delta
        self.epsilon = epsilon
        self.trees = [bsh_mod.build_bsh(b, epsilon=epsilon) for b in bodies]
        self._plane_cache: dict = {}

    def evaluate(self, state: SystemState, order: int = 2, counts=None) -> PotentialEval:
        cutoff = 2.5 * self.delta  # margins clear delta once the gap exceeds ~2*delta
        terms = []
        supports = []
        n = state.num_bodies
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
                    ca, ra = leaf_sphere(tri_a)
                    for fb in tris_b:
                        tri_b = vb[fb]
                        cb, rb = leaf_sphere(tri_b)
                        gap_lb = np.linalg.norm(ca - cb) - ra - rb
                        if gap_lb >= cutoff:
                            continue
                        ids = np.concatenate([fa + off_a, fb + off_b])
                        key = (a, b, int(ids[0]), int(ids[3]))
                        try:
                            plane = solve_separating_plane(
                                tri_a, tri_b, barrier=self.barrier,
                                init=self._plane_cache.get(key),
                            )
                        except NotSeparableError:
                            return PotentialEval.infinite_eval(np.sort(ids))
                        self._plane_cache[key] = np.concatenate([plane.n, [plane.d]])
                        term = pair_potential(
                            tri_a, tri_b, order=order, barrier=self.barrier,
                            support_ids=ids, plane=plane,
                        )
                        if counts is not None:
                            counts.exact_terms += 1
                        if term.value == 0.0 and order == 0:
                            continue
                        terms.append(term)
                        supports.append(term.support)
        if not terms:
            return PotentialEval.zero(np.arange(0), order)
        union = np.unique(np.concatenate(supports))
        return sum_evals(terms, union, order)


def make_backend(name: str, bodies, epsilon: float = 0.1, delta: float = 0.01,
                 threads: int = 1):
    if name == "bsh":
        return BshBackend(bodies, epsilon=epsilon, threads=threads)
    if name == "brute":
        return BruteBackend(bodies, epsilon=epsilon)
    if name == "local-baseline":
        return LocalBaselineBackend(bodies, delta=delta, epsilon=epsilon)
    raise ValueError(f"unknown backend {name!r} (use bsh, brute, or local-baseline)")
