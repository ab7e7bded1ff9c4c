"""Smoothstep blending of two potentials gated by cluster-center distance.

The blend weight is phi = smoothstep((r - d1)/(d2 - d1)) with r the distance
between the two cluster centers. Because centers are vertex means, the
weight's derivatives distribute 1/|I| (resp. 1/|J|) over the member
vertices, and the combined potential stays twice differentiable across both
seams (the quintic has vanishing first and second derivatives at 0 and 1).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .evals import PotentialEval, embed_indices


def smoothstep(d: float) -> float:
    """Quintic smoothstep clamped to [0, 1]; C2 on all of R."""
    if d <= 0.0:
        return 0.0
    if d >= 1.0:
        return 1.0
    poly = d * d * d * (10.0 + d * (-15.0 + 6.0 * d))
    return min(1.0, max(0.0, poly))  # rounding can overshoot inside (0, 1)


def smoothstep_d1(d: float) -> float:
    if d <= 0.0 or d >= 1.0:
        return 0.0
    return 30.0 * (d * (1.0 - d)) ** 2  # factored: nonnegative by construction


def smoothstep_d2(d: float) -> float:
    if d <= 0.0 or d >= 1.0:
        return 0.0
    return 60.0 * d * (1.0 - d) * (1.0 - 2.0 * d)


@dataclass
class BlendSpec:
    """Geometry of a blend between cluster I and cluster J."""

    d1: float
    d2: float
    center_i: np.ndarray
    center_j: np.ndarray
    members_i: np.ndarray  # vertex ids of cluster I
    members_j: np.ndarray
    support: np.ndarray = field(init=False)  # sorted union

    def __post_init__(self):
        if not (0.0 < self.d1 < self.d2):
            raise ValueError("require 0 < d1 < d2")
        self.members_i = np.asarray(self.members_i, dtype=int)
        self.members_j = np.asarray(self.members_j, dtype=int)
        self.support = np.concatenate([self.members_i, self.members_j])
        self.support.sort()
        if len(np.unique(self.support)) != len(self.support):
            raise ValueError("blend clusters must be disjoint")

    @property
    def count_i(self) -> int:
        return len(self.members_i)

    @property
    def count_j(self) -> int:
        return len(self.members_j)

    def center_distance(self) -> float:
        return float(np.linalg.norm(self.center_i - self.center_j))

    def weight(self) -> float:
        r = self.center_distance()
        return smoothstep((r - self.d1) / (self.d2 - self.d1))


def blend(
    spec: BlendSpec,
    near: PotentialEval | None,
    far: PotentialEval | None,
    order: int = 2,
) -> PotentialEval:
    """(1 - phi) * near + phi * far with full derivatives.

    ``near`` may be omitted when phi == 1 and ``far`` when phi == 0; at the
    seams the result equals the surviving operand exactly. An infinite
    ``near`` inside the band would violate the R_I + R_J <= d1 gate and is
    rejected.
    """
    r = spec.center_distance()
    width = spec.d2 - spec.d1
    s = (r - spec.d1) / width
    phi = smoothstep(s)
    if phi == 0.0:
        if near is None:
            raise ValueError("near potential required when phi == 0")
        return near
    if phi == 1.0:
        if far is None:
            raise ValueError("far potential required when phi == 1")
        return far
    if near is None or far is None:
        raise ValueError("both potentials required inside the blend band")
    if far.infinite:
        raise ValueError("far potential must be finite")
    if near.infinite:
        raise AssertionError(
            "infinite near potential inside the blend band: the "
            "R_I + R_J <= d1 gate was violated"
        )

    value = (1.0 - phi) * near.value + phi * far.value
    if order == 0:
        return PotentialEval(value, spec.support)

    n = len(spec.support)
    grad = np.zeros((n, 3))
    pos_near = embed_indices(near.support, spec.support)
    pos_far = embed_indices(far.support, spec.support)
    grad[pos_near] += (1.0 - phi) * near.grad
    grad[pos_far] += phi * far.grad

    # dphi/dr spread over member vertices through the center means
    dphi_dr = smoothstep_d1(s) / width
    u = (spec.center_i - spec.center_j) / r
    pos_i = embed_indices(np.sort(spec.members_i), spec.support)
    pos_j = embed_indices(np.sort(spec.members_j), spec.support)
    sigma = np.zeros(n)
    sigma[pos_i] = 1.0 / spec.count_i
    sigma[pos_j] = -1.0 / spec.count_j
    grad_r = np.outer(sigma, u)  # (n, 3): d r / d x_v
    diff = far.value - near.value
    grad += diff * dphi_dr * grad_r

    if order == 1:
        return PotentialEval(value, spec.support, grad)

    hess = np.zeros((3 * n, 3 * n))
    cnear = (3 * pos_near[:, None] + np.arange(3)[None, :]).ravel()
    cfar = (3 * pos_far[:, None] + np.arange(3)[None, :]).ravel()
    hess[np.ix_(cnear, cnear)] += (1.0 - phi) * near.hess
    hess[np.ix_(cfar, cfar)] += phi * far.hess

    # cross terms: grad(phi) (gfar - gnear)^T + transpose
    grad_phi = (dphi_dr * grad_r).ravel()
    gdiff = np.zeros((n, 3))
    gdiff[pos_far] += far.grad
    gdiff[pos_near] -= near.grad
    gdiff = gdiff.ravel()
    hess += np.outer(grad_phi, gdiff) + np.outer(gdiff, grad_phi)

    # (far - near) * hess(phi)
    d2phi_dr2 = smoothstep_d2(s) / (width * width)
    gr = grad_r.ravel()
    perp = (np.eye(3) - np.outer(u, u)) / r
    hess_r = np.kron(np.outer(sigma, sigma), perp)
    hess += diff * (d2phi_dr2 * np.outer(gr, gr) + dphi_dr * hess_r)
    return PotentialEval(value, spec.support, grad, hess)
