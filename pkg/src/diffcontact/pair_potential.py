"""Separating-plane contact potential between two triangles.

The potential is the minimum over planes p = (n, d) of a barrier objective
with seven terms: one on 1 - |n| (weight 12) and one per vertex margin.
The inner problem is strictly convex in p for the reciprocal barrier, so
the potential is well defined; first derivatives in the vertex positions
follow from the envelope theorem and second derivatives from the implicit
function theorem.

The closed-form ``centered_potential`` is the same construction with both
triangles collapsed to points: 12 * (1 + 1/sqrt(|ci - cj|))^2.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .barriers import RECIPROCAL, ReciprocalBarrier
from .evals import PotentialEval
from .geometry import triangle_pair_closest

_WEIGHTS = np.array([12.0, 1, 1, 1, 1, 1, 1])


class NotSeparableError(Exception):
    """The closed convex hulls intersect; no separating plane exists."""


class PlaneSolveError(Exception):
    def __init__(self, message: str, residual: float):
        super().__init__(message)
        self.residual = residual


@dataclass
class SeparatingPlane:
    n: np.ndarray  # (3,), 0 < |n| < 1 at the optimum
    d: float
    newton_iters: int
    residual: float
    value: float
    margins: np.ndarray  # (7,) barrier arguments at the optimum


def _margins(p: np.ndarray, va: np.ndarray, vb: np.ndarray) -> np.ndarray:
    n, d = p[:3], p[3]
    s = np.empty(7)
    s[0] = 1.0 - np.linalg.norm(n)
    s[1:4] = va @ n + d
    s[4:7] = -(vb @ n) - d
    return s


def _margin_jacobian(p: np.ndarray, va: np.ndarray, vb: np.ndarray) -> np.ndarray:
    """ds/dp, shape (7, 4). Row 0 depends on the current n."""
    n = p[:3]
    nn = np.linalg.norm(n)
    ds = np.zeros((7, 4))
    ds[0, :3] = -n / nn
    ds[1:4, :3] = va
    ds[1:4, 3] = 1.0
    ds[4:7, :3] = -vb
    ds[4:7, 3] = -1.0
    return ds


def _objective(p, va, vb, barrier):
    s = _margins(p, va, vb)
    if np.any(s <= 0):
        return float("inf"), s
    return float(_WEIGHTS @ barrier.value(s)), s


def _grad_hess(p, va, vb, barrier, s):
    ds = _margin_jacobian(p, va, vb)
    b1 = _WEIGHTS * barrier.d1(s)
    b2 = _WEIGHTS * barrier.d2(s)
    g = ds.T @ b1
    h = ds.T @ (b2[:, None] * ds)
    # curvature of s0 = 1 - |n|: d2 s0 / dn2 = -(I - u u^T)/|n|
    n = p[:3]
    nn = np.linalg.norm(n)
    u = n / nn
    h[:3, :3] += b1[0] * (-(np.eye(3) - np.outer(u, u)) / nn)
    return g, h


def _initial_plane(va: np.ndarray, vb: np.ndarray) -> np.ndarray:
    """Strictly feasible start: centered direction first, then the exact
    closest-feature direction and the two face normals (the latter stay
    numerically reliable at gaps far below the witness direction's noise
    floor, which scales with triangle extent / gap)."""

    def along(u):
        n = 0.5 * u
        d = -0.5 * (np.min(va @ n) + np.max(vb @ n))
        return np.concatenate([n, [d]])

    ci, cj = va.mean(axis=0), vb.mean(axis=0)
    delta = ci - cj
    dist = np.linalg.norm(delta)
    if dist > 0:
        p = along(delta / dist)
        if np.all(_margins(p, va, vb) > 0):
            return p
    gap, pa, pb = triangle_pair_closest(va, vb)
    if gap <= 1e-12:
        raise NotSeparableError("convex hulls intersect (closed-hull test)")
    candidates = [(pa - pb) / gap]
    for tri in (va, vb):
        nrm = np.cross(tri[1] - tri[0], tri[2] - tri[0])
        nn = np.linalg.norm(nrm)
        if nn > 0:
            candidates += [nrm / nn, -nrm / nn]
    best_p, best_margin = None, 0.0
    for u in candidates:
        p = along(u)
        margin = float(np.min(_margins(p, va, vb)))
        if margin > best_margin:
            best_p, best_margin = p, margin
    if best_p is None:
        raise NotSeparableError(
            f"no strictly feasible separating plane at gap {gap:.3e}"
        )
    return best_p


def solve_separating_plane(
    tri_i,
    tri_j,
    barrier=RECIPROCAL,
    tol: float = 1e-10,
    max_iters: int = 100,
    init: np.ndarray | None = None,
) -> SeparatingPlane:
    """Minimize the plane objective by a damped Newton method.

    Line search combines a fraction-to-boundary clip (factor 0.9) on the
    affine margins with Armijo backtracking; all seven barrier arguments
    stay strictly positive along the iteration. ``init`` warm-starts the
    iteration when it is strictly feasible for the current vertices.

    Raises NotSeparableError when the hulls intersect and PlaneSolveError
    when Newton fails to reach the stationarity tolerance.
    """
    va = np.asarray(tri_i, dtype=float)
    vb = np.asarray(tri_j, dtype=float)
    p = None
    if init is not None and np.all(_margins(init, va, vb) > 0):
        p = np.asarray(init, dtype=float).copy()
    warm = p is not None
    if p is None:
        p = _initial_plane(va, vb)
    return _newton_plane(p, va, vb, barrier, tol, max_iters, warm)


def _newton_plane(p, va, vb, barrier, tol, max_iters, warm) -> SeparatingPlane:
    val, s = _objective(p, va, vb, barrier)
    iters = 0
    residual = float("inf")
    for iters in range(max_iters + 1):
        g, h = _grad_hess(p, va, vb, barrier, s)
        residual = float(np.linalg.norm(g))
        if residual <= tol * max(1.0, abs(val)) or residual <= _residual_floor(
            p, va, vb, barrier, s
        ):
            break
        try:
            step = np.linalg.solve(h, -g)
        except np.linalg.LinAlgError:
            step = np.linalg.solve(h + 1e-10 * np.trace(h) * np.eye(4), -g)
        if g @ step >= 0:  # only possible for the clamped barrier's flats
            step = -g
        ds = _margin_jacobian(p, va, vb)
        delta_s = ds[1:] @ step
        alpha = 1.0
        shrink = delta_s < 0
        if np.any(shrink):
            alpha = min(1.0, float(np.min(0.9 * s[1:][shrink] / -delta_s[shrink])))
        # When the predicted decrease drops below the floating point
        # resolution of L, Armijo cannot verify progress; accept on
        # residual decrease instead (per candidate step length).
        resolution = 1e-12 * max(1.0, abs(val))
        accepted = False
        for _ in range(64):
            cand = p + alpha * step
            cand_val, cand_s = _objective(cand, va, vb, barrier)
            if np.isfinite(cand_val) and np.all(cand_s > 0):
                pred = alpha * (g @ step)
                if -pred >= resolution:
                    if cand_val <= val + 1e-4 * pred:
                        accepted = True
                        break
                else:
                    cand_g, _ = _grad_hess(cand, va, vb, barrier, cand_s)
                    if (
                        np.linalg.norm(cand_g) < residual
                        and cand_val <= val + resolution
                    ):
                        accepted = True
                        break
            alpha *= 0.5
        if not accepted:
            if warm:
                # a warm start can strand the iteration in an ill-conditioned
                # corner; retry once from the geometric initialization
                return _newton_plane(
                    _initial_plane(va, vb), va, vb, barrier, tol, max_iters, False
                )
            floor = _residual_floor(p, va, vb, barrier, s)
            if residual <= max(1e3 * tol * max(1.0, abs(val)), 1e4 * floor):
                # stationarity is rounding-limited; the envelope theorem keeps
                # the value error at O(residual^2 / curvature), negligible here
                break
            raise PlaneSolveError(
                f"line search stalled at residual {residual:.3e} "
                f"(value {val:.6e}, tol {tol:.1e}, margins {np.min(s):.3e})",
                residual,
            )
        p, val, s = cand, cand_val, cand_s
    else:
        if warm:
            return _newton_plane(
                _initial_plane(va, vb), va, vb, barrier, tol, max_iters, False
            )
        raise PlaneSolveError(
            f"no convergence in {max_iters} Newton iterations "
            f"(residual {residual:.3e})",
            residual,
        )
    return SeparatingPlane(p[:3].copy(), float(p[3]), iters, residual, val, s)


def _residual_floor(p, va, vb, barrier, s) -> float:
    """Rounding floor of the stationarity residual: the gradient is a sum of
    terms of magnitude |w b'(s)| * |ds/dp| that cancel at the optimum."""
    ds = _margin_jacobian(p, va, vb)
    mags = np.abs(_WEIGHTS * barrier.d1(s)) * np.linalg.norm(ds, axis=1)
    return 64.0 * np.finfo(float).eps * float(np.sum(mags))


def _finalize(support_ids, grad_rows, hess, value) -> PotentialEval:
    """Sort support ids and permute gradient/Hessian rows to match."""
    support_ids = np.asarray(support_ids, dtype=int)
    order = np.argsort(support_ids)
    support = support_ids[order]
    if len(np.unique(support)) != len(support):
        raise ValueError("support ids must be unique")
    grad = grad_rows[order] if grad_rows is not None else None
    h = None
    if hess is not None:
        cols = (3 * order[:, None] + np.arange(3)[None, :]).ravel()
        h = hess[np.ix_(cols, cols)]
    return PotentialEval(value, support, grad, h)


def pair_potential(
    tri_i,
    tri_j,
    order: int = 2,
    barrier=RECIPROCAL,
    support_ids=None,
    plane: SeparatingPlane | None = None,
) -> PotentialEval:
    """Exact potential between two triangles with derivatives in the six
    vertex positions.

    ``support_ids`` gives the vertex ids for [i(1), i(2), i(3), j(1), j(2),
    j(3)]; defaults to 0..5. Non-separable pairs yield the infinite
    sentinel rather than raising.
    """
    va = np.asarray(tri_i, dtype=float)
    vb = np.asarray(tri_j, dtype=float)
    if support_ids is None:
        support_ids = np.arange(6)
    try:
        if plane is None:
            plane = solve_separating_plane(tri_i, tri_j, barrier=barrier)
    except NotSeparableError:
        return PotentialEval.infinite_eval(np.sort(np.asarray(support_ids)))
    if order == 0:
        return _finalize(support_ids, None, None, plane.value)

    n = plane.n
    s = plane.margins
    b1 = barrier.d1(s)
    b2 = barrier.d2(s)
    grad = np.empty((6, 3))
    grad[:3] = b1[1:4, None] * n[None, :]
    grad[3:] = -b1[4:7, None] * n[None, :]

    if isinstance(barrier, ReciprocalBarrier):
        _check_force_direction(va, vb, n, s)

    if order == 1:
        return _finalize(support_ids, grad, None, plane.value)

    # Schur complement of the plane block: H = L_xx - L_xp L_pp^{-1} L_px
    p = np.concatenate([n, [plane.d]])
    _, lpp = _grad_hess(p, va, vb, barrier, s)
    lxp = np.zeros((18, 4))
    eye = np.eye(3)
    for k in range(3):
        r = slice(3 * k, 3 * k + 3)
        lxp[r, :3] = b2[1 + k] * np.outer(n, va[k]) + b1[1 + k] * eye
        lxp[r, 3] = b2[1 + k] * n
    for k in range(3):
        r = slice(9 + 3 * k, 12 + 3 * k)
        lxp[r, :3] = b2[4 + k] * np.outer(n, vb[k]) - b1[4 + k] * eye
        lxp[r, 3] = b2[4 + k] * n
    hess = np.zeros((18, 18))
    nnt = np.outer(n, n)
    for k in range(3):
        r = slice(3 * k, 3 * k + 3)
        hess[r, r] = b2[1 + k] * nnt
        r = slice(9 + 3 * k, 12 + 3 * k)
        hess[r, r] = b2[4 + k] * nnt
    try:
        sol = np.linalg.solve(lpp, lxp.T)
    except np.linalg.LinAlgError:
        # flat directions (clamped barrier): pseudo-inverse on the active part
        sol = np.linalg.lstsq(lpp, lxp.T, rcond=1e-12)[0]
    hess -= lxp @ sol
    return _finalize(support_ids, grad, hess, plane.value)


def _check_force_direction(va, vb, n, s):
    """Stationarity implies n = alpha (a - b) with hull witnesses a, b; the
    per-vertex force n / margin^2 must point from hull J to hull I."""
    wa = 1.0 / s[1:4] ** 2
    wb = 1.0 / s[4:7] ** 2
    a = (wa @ va) / wa.sum()
    b = (wb @ vb) / wb.sum()
    diff = a - b
    assert n @ diff > 0, "separating normal opposes the witness direction"
    cross = np.linalg.norm(np.cross(n, diff))
    assert cross <= 1e-6 * max(np.linalg.norm(n) * np.linalg.norm(diff), 1e-300), (
        "separating normal deviates from the witness segment"
    )


def centered_value(distance: float, order: int = 2):
    """12 (1 + r^{-1/2})^2 and radial derivatives at r = distance."""
    r = float(distance)
    inv_sqrt = 1.0 / np.sqrt(r)
    val = 12.0 * (1.0 + inv_sqrt) ** 2
    if order == 0:
        return val, None, None
    d1 = -12.0 * (r ** -1.5 + r ** -2.0)
    if order == 1:
        return val, d1, None
    d2 = 12.0 * (1.5 * r ** -2.5 + 2.0 * r ** -3.0)
    return val, d1, d2


def centered_potential(
    c_i,
    c_j,
    count_i: int,
    count_j: int,
    members_i=None,
    members_j=None,
    order: int = 2,
) -> PotentialEval:
    """Closed-form potential between two cluster centers.

    The gradient on each of the count_i (resp. count_j) cluster vertices is
    1/count of the center gradient, consistent with centers being vertex
    means. ``members_i``/``members_j`` give the vertex ids (defaults to a
    local 0..count_i+count_j-1 numbering).
    """
    c_i = np.asarray(c_i, dtype=float)
    c_j = np.asarray(c_j, dtype=float)
    if members_i is None:
        members_i = np.arange(count_i)
    if members_j is None:
        members_j = np.arange(count_i, count_i + count_j)
    members_i = np.asarray(members_i, dtype=int)
    members_j = np.asarray(members_j, dtype=int)
    ids = np.concatenate([members_i, members_j])
    delta = c_i - c_j
    r = float(np.linalg.norm(delta))
    if r == 0.0:
        return PotentialEval.infinite_eval(np.sort(ids))
    val, f1, f2 = centered_value(r, order)
    if order == 0:
        return _centered_finalize(ids, None, None, val)
    u = delta / r
    sigma = np.concatenate(
        [np.full(count_i, 1.0 / count_i), np.full(count_j, -1.0 / count_j)]
    )
    grad = np.outer(sigma, f1 * u)
    if order == 1:
        return _centered_finalize(ids, grad, None, val)
    radial = f2 * np.outer(u, u) + (f1 / r) * (np.eye(3) - np.outer(u, u))
    hess = np.kron(np.outer(sigma, sigma), radial)
    return _centered_finalize(ids, grad, hess, val)


def _centered_finalize(ids, grad, hess, val) -> PotentialEval:
    order = np.argsort(ids)
    support = ids[order]
    if len(np.unique(support)) != len(support):
        raise ValueError("cluster members must be disjoint")
    g = grad[order] if grad is not None else None
    h = None
    if hess is not None:
        cols = (3 * order[:, None] + np.arange(3)[None, :]).ravel()
        h = hess[np.ix_(cols, cols)]
    return PotentialEval(val, support, g, h)
