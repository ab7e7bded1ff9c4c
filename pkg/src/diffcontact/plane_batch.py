"""Vectorized separating-plane solves for many triangle pairs at once.

The hierarchical evaluator funnels all leaf-exact pairs of one body pair
through here: one damped-Newton iteration advances every active pair
simultaneously (reciprocal barrier only). Pairs that fail the batched
Armijo search or exceed the batched iteration budget fall back to the
scalar solver, which additionally handles the sub-resolution regime; the
scalar path is the reference implementation.
"""

from __future__ import annotations

import numpy as np

from .pair_potential import (
    NotSeparableError,
    PlaneSolveError,
    SeparatingPlane,
    _initial_plane as _initial_plane_scalar,
    solve_separating_plane,
)

_W = np.array([12.0, 1, 1, 1, 1, 1, 1])
_EPS = np.finfo(float).eps


def _margins_batch(p, va, vb):
    n = p[:, :3]
    d = p[:, 3]
    s = np.empty((len(p), 7))
    s[:, 0] = 1.0 - np.linalg.norm(n, axis=1)
    s[:, 1:4] = np.einsum("kij,kj->ki", va, n) + d[:, None]
    s[:, 4:7] = -np.einsum("kij,kj->ki", vb, n) - d[:, None]
    return s


def _objective_batch(s):
    vals = np.full(len(s), np.inf)
    ok = np.all(s > 0, axis=1)
    if np.any(ok):
        vals[ok] = (_W / s[ok]).sum(axis=1)
    return vals


def _ds_batch(p, va, vb):
    k = len(p)
    n = p[:, :3]
    nn = np.linalg.norm(n, axis=1)
    ds = np.zeros((k, 7, 4))
    ds[:, 0, :3] = -n / nn[:, None]
    ds[:, 1:4, :3] = va
    ds[:, 1:4, 3] = 1.0
    ds[:, 4:7, :3] = -vb
    ds[:, 4:7, 3] = -1.0
    return ds, nn


def _grad_hess_batch(p, va, vb, s):
    ds, nn = _ds_batch(p, va, vb)
    b1 = -_W / (s * s)
    b2 = 2.0 * _W / (s * s * s)
    g = np.einsum("ki,kia->ka", b1, ds)
    h = np.einsum("ki,kia,kib->kab", b2, ds, ds)
    u = p[:, :3] / nn[:, None]
    proj = np.eye(3)[None] - np.einsum("ka,kb->kab", u, u)
    h[:, :3, :3] += (-b1[:, 0] / nn)[:, None, None] * proj
    floor = 64.0 * _EPS * np.einsum(
        "ki,ki->k", np.abs(b1), np.linalg.norm(ds, axis=2)
    )
    return g, h, floor


def _centered_inits(va, vb):
    ca = va.mean(axis=1)
    cb = vb.mean(axis=1)
    delta = ca - cb
    dist = np.linalg.norm(delta, axis=1)
    dist = np.where(dist > 0, dist, 1.0)
    n = 0.5 * delta / dist[:, None]
    lo = np.min(np.einsum("kij,kj->ki", va, n), axis=1)
    hi = np.max(np.einsum("kij,kj->ki", vb, n), axis=1)
    d = -0.5 * (lo + hi)
    return np.column_stack([n, d])


def solve_planes_batch(
    va: np.ndarray,
    vb: np.ndarray,
    init: np.ndarray | None = None,
    tol: float = 1e-10,
    max_iters: int = 40,
):
    """Solve K separating-plane problems simultaneously (reciprocal barrier).

    va, vb: (K, 3, 3) triangle vertices. ``init`` rows may contain NaN for
    cold starts. Returns (planes, separable) where planes is a list of
    SeparatingPlane or None (non-separable pairs).
    """
    k = len(va)
    p = np.empty((k, 4))
    separable = np.ones(k, dtype=bool)

    cand = _centered_inits(va, vb)
    if init is not None:
        has = ~np.any(np.isnan(init), axis=1)
        feas = np.zeros(k, dtype=bool)
        if np.any(has):
            feas[has] = np.all(_margins_batch(init[has], va[has], vb[has]) > 0, axis=1)
        p[feas] = init[feas]
        rest = ~feas
    else:
        rest = np.ones(k, dtype=bool)
    if np.any(rest):
        ok = np.all(_margins_batch(cand[rest], va[rest], vb[rest]) > 0, axis=1)
        idx = np.flatnonzero(rest)
        p[idx[ok]] = cand[idx[ok]]
        for i in idx[~ok]:
            try:
                p[i] = _initial_plane_scalar(va[i], vb[i])
            except NotSeparableError:
                separable[i] = False

    active = separable.copy()
    s = np.zeros((k, 7))
    s[active] = _margins_batch(p[active], va[active], vb[active])
    val = np.full(k, np.inf)
    val[active] = _objective_batch(s[active])
    residual = np.full(k, np.inf)
    iters = np.zeros(k, dtype=int)
    needs_scalar = np.zeros(k, dtype=bool)

    for _ in range(max_iters):
        if not np.any(active):
            break
        ia = np.flatnonzero(active)
        g, h, floor = _grad_hess_batch(p[ia], va[ia], vb[ia], s[ia])
        res = np.linalg.norm(g, axis=1)
        residual[ia] = res
        done = (res <= tol * np.maximum(1.0, np.abs(val[ia]))) | (res <= floor)
        active[ia[done]] = False
        ia = ia[~done]
        if len(ia) == 0:
            break
        g, h = g[~done], h[~done]
        try:
            step = np.linalg.solve(h, -g[..., None])[..., 0]
        except np.linalg.LinAlgError:
            needs_scalar[ia] = True
            active[ia] = False
            break
        ds, _ = _ds_batch(p[ia], va[ia], vb[ia])
        delta_s = np.einsum("kia,ka->ki", ds[:, 1:, :], step)
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(delta_s < 0, 0.9 * s[ia][:, 1:] / -delta_s, np.inf)
        alpha = np.minimum(1.0, ratio.min(axis=1))
        gdots = np.einsum("ka,ka->k", g, step)
        resolution = 1e-12 * np.maximum(1.0, np.abs(val[ia]))
        searching = np.ones(len(ia), dtype=bool)
        for _ls in range(30):
            js = np.flatnonzero(searching)
            if len(js) == 0:
                break
            rows = ia[js]
            candp = p[rows] + alpha[js, None] * step[js]
            cs = _margins_batch(candp, va[rows], vb[rows])
            cv = _objective_batch(cs)
            feas = np.all(cs > 0, axis=1)
            pred = alpha[js] * gdots[js]
            armijo = -pred >= resolution[js]
            okrow = feas & armijo & (cv <= val[rows] + 1e-4 * pred)
            # sub-resolution predicted decrease: accept on residual decrease
            sub = np.flatnonzero(feas & ~armijo)
            if len(sub):
                cg, _, _ = _grad_hess_batch(
                    candp[sub], va[rows[sub]], vb[rows[sub]], cs[sub]
                )
                better = (
                    np.linalg.norm(cg, axis=1) < residual[rows[sub]]
                ) & (cv[sub] <= val[rows[sub]] + resolution[js[sub]])
                okrow[sub[better]] = True
            acc = rows[okrow]
            p[acc] = candp[okrow]
            s[acc] = cs[okrow]
            val[acc] = cv[okrow]
            iters[acc] += 1
            searching[js[okrow]] = False
            alpha[js[~okrow]] *= 0.5
        stalled = ia[searching]
        needs_scalar[stalled] = True
        active[stalled] = False
    needs_scalar[active] = True  # iteration budget exhausted

    planes: list[SeparatingPlane | None] = [None] * k
    for i in range(k):
        if not separable[i]:
            continue
        if needs_scalar[i]:
            try:
                planes[i] = solve_separating_plane(
                    va[i], vb[i], tol=tol, init=p[i] if np.all(s[i] > 0) else None
                )
            except NotSeparableError:
                separable[i] = False
            except PlaneSolveError:
                planes[i] = None
                separable[i] = False
        else:
            planes[i] = SeparatingPlane(
                p[i, :3].copy(), float(p[i, 3]), int(iters[i]), float(residual[i]),
                float(val[i]), s[i].copy(),
            )
    return planes, separable


def batch_pair_derivatives(va, vb, planes, order: int):
    """grad (K,6,3) and hess (K,18,18) for solved planes (reciprocal barrier)."""
    kk = len(va)
    p = np.stack([np.concatenate([pl.n, [pl.d]]) for pl in planes])
    s = np.stack([pl.margins for pl in planes])
    n = p[:, :3]
    b1 = -1.0 / (s * s)
    b2 = 2.0 / (s * s * s)
    grad = np.empty((kk, 6, 3))
    grad[:, :3] = b1[:, 1:4, None] * n[:, None, :]
    grad[:, 3:] = -b1[:, 4:7, None] * n[:, None, :]
    if order < 2:
        return grad, None
    _, lpp = _grad_hess_batch(p, va, vb, s)[:2]
    lxp = np.zeros((kk, 18, 4))
    eye = np.eye(3)
    for t in range(3):
        r = slice(3 * t, 3 * t + 3)
        lxp[:, r, :3] = b2[:, 1 + t, None, None] * np.einsum(
            "ka,kb->kab", n, va[:, t]
        ) + b1[:, 1 + t, None, None] * eye
        lxp[:, r, 3] = b2[:, 1 + t, None] * n
        rb = slice(9 + 3 * t, 12 + 3 * t)
        lxp[:, rb, :3] = b2[:, 4 + t, None, None] * np.einsum(
            "ka,kb->kab", n, vb[:, t]
        ) - b1[:, 4 + t, None, None] * eye
        lxp[:, rb, 3] = b2[:, 4 + t, None] * n
    hess = np.zeros((kk, 18, 18))
    nnt = np.einsum("ka,kb->kab", n, n)
    for t in range(3):
        r = slice(3 * t, 3 * t + 3)
        hess[:, r, r] = b2[:, 1 + t, None, None] * nnt
        rb = slice(9 + 3 * t, 12 + 3 * t)
        hess[:, rb, rb] = b2[:, 4 + t, None, None] * nnt
    sol = np.linalg.solve(lpp, lxp.transpose(0, 2, 1))
    hess -= np.einsum("kia,kaj->kij", lxp, sol)
    return grad, hess
