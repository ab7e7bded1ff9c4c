"""SO(3) utilities: Rodrigues map, logarithm, and exact derivatives.

Everything the stepper needs to differentiate rigid kinematics lives here:
the rotation of a point by ``exp([theta]x)`` together with its exact first
and second derivatives in ``theta``, and the right/left Jacobians of SO(3)
used to differentiate rotation increments between timesteps.

Conventions: rotation increments multiply on the right (body frame),
``R_new = R_old @ exp_so3(theta)``.
"""

from __future__ import annotations

import numpy as np

_EPS_ANGLE = 1e-4  # below this, Taylor series are more accurate than ratios


def hat(v: np.ndarray) -> np.ndarray:
    """Skew-symmetric matrix such that hat(v) @ w == cross(v, w)."""
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def vee(m: np.ndarray) -> np.ndarray:
    return np.array([m[2, 1], m[0, 2], m[1, 0]])


def _sinc_coeffs(phi: float) -> tuple[float, float, float]:
    """Rodrigues coefficients A=sin(phi)/phi, B=(1-cos)/phi^2, C=(phi-sin)/phi^3."""
    if phi < _EPS_ANGLE:
        p2 = phi * phi
        a = 1.0 - p2 / 6.0 + p2 * p2 / 120.0
        b = 0.5 - p2 / 24.0 + p2 * p2 / 720.0
        c = 1.0 / 6.0 - p2 / 120.0 + p2 * p2 / 5040.0
    else:
        a = np.sin(phi) / phi
        b = (1.0 - np.cos(phi)) / (phi * phi)
        c = (phi - np.sin(phi)) / (phi ** 3)
    return a, b, c


def _dcoeffs_over_phi(phi: float) -> tuple[float, float]:
    """(dB/dphi)/phi and (dC/dphi)/phi, stable at phi -> 0."""
    if phi < _EPS_ANGLE:
        p2 = phi * phi
        bp = -1.0 / 12.0 + p2 / 180.0 - p2 * p2 / 6720.0
        cp = -1.0 / 60.0 + p2 / 1260.0 - p2 * p2 / 60480.0
    else:
        s, c = np.sin(phi), np.cos(phi)
        bp = (phi * s - 2.0 * (1.0 - c)) / phi ** 4
        cp = (phi * (1.0 - c) - 3.0 * (phi - s)) / phi ** 5
    return bp, cp


def exp_so3(theta: np.ndarray) -> np.ndarray:
    """Rodrigues formula: rotation matrix for the rotation vector theta."""
    phi = float(np.linalg.norm(theta))
    a, b, _ = _sinc_coeffs(phi)
    k = hat(theta)
    return np.eye(3) + a * k + b * (k @ k)


def log_so3(rot: np.ndarray) -> np.ndarray:
    """Rotation vector of a rotation matrix (inverse of exp_so3).

    Robust near both phi = 0 (series) and phi = pi (axis from the symmetric
    part). Result has norm in [0, pi].
    """
    tr = np.clip((np.trace(rot) - 1.0) * 0.5, -1.0, 1.0)
    phi = float(np.arccos(tr))
    w = vee(rot - rot.T) * 0.5  # = sin(phi) * axis
    if phi < 1e-6:
        return w  # theta = phi*axis ~ w(1 + phi^2/6), error O(1e-18)
    if phi > np.pi - 1e-4:
        # axis from the dominant column of R + I; sign fixed against w
        m = rot + np.eye(3)
        col = int(np.argmax(np.diagonal(m)))
        axis = m[:, col] / np.linalg.norm(m[:, col])
        if np.dot(axis, w) < 0:
            axis = -axis
        return phi * axis
    return (phi / np.sin(phi)) * w


def right_jacobian(theta: np.ndarray) -> np.ndarray:
    """J_r with exp(theta + d) = exp(theta) @ exp(J_r(theta) @ d) to first order."""
    phi = float(np.linalg.norm(theta))
    _, b, c = _sinc_coeffs(phi)
    k = hat(theta)
    return np.eye(3) - b * k + c * (k @ k)


def right_jacobian_inv(theta: np.ndarray) -> np.ndarray:
    phi = float(np.linalg.norm(theta))
    if phi < _EPS_ANGLE:
        p2 = phi * phi
        w = 1.0 / 12.0 + p2 / 720.0 + p2 * p2 / 30240.0
    else:
        w = 1.0 / (phi * phi) - (1.0 + np.cos(phi)) / (2.0 * phi * np.sin(phi))
    k = hat(theta)
    return np.eye(3) + 0.5 * k + w * (k @ k)


def left_jacobian_inv(theta: np.ndarray) -> np.ndarray:
    return right_jacobian_inv(theta).T


def d_right_jacobian(theta: np.ndarray) -> np.ndarray:
    """dJr[l] = d J_r / d theta_l, shape (3, 3, 3)."""
    phi = float(np.linalg.norm(theta))
    _, b, c = _sinc_coeffs(phi)
    bp_over, cp_over = _dcoeffs_over_phi(phi)
    k = hat(theta)
    k2 = k @ k
    out = np.empty((3, 3, 3))
    basis = np.eye(3)
    for l in range(3):
        el = hat(basis[l])
        out[l] = (
            -(bp_over * theta[l]) * k
            - b * el
            + (cp_over * theta[l]) * k2
            + c * (el @ k + k @ el)
        )
    return out


def rotate_points(theta: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """exp_so3(theta) applied to each row of pts (n, 3)."""
    return pts @ exp_so3(theta).T


def rotation_derivatives(theta: np.ndarray, pts: np.ndarray, order: int = 2):
    """Derivatives of p -> exp_so3(theta) @ p for each row of pts.

    Returns (rotated, first, second) where
      rotated : (n, 3)
      first   : (n, 3, 3)     first[v][i, k] = d rotated[v, i] / d theta_k
      second  : (n, 3, 3, 3)  second[v][i, k, l], symmetric in (k, l);
                None when order < 2.
    """
    pts = np.asarray(pts, dtype=float)
    rot = exp_so3(theta)
    jr = right_jacobian(theta)
    rotated = pts @ rot.T
    if order < 1:
        return rotated, None, None
    # d(R p)/dtheta = -R [p]x J_r
    crosses = _hat_batch(pts)  # (n,3,3)
    first = -np.einsum("ij,njk,kl->nil", rot, crosses, jr)
    if order < 2:
        return rotated, first, None
    djr = d_right_jacobian(theta)  # (3,3,3), djr[l]
    second = np.empty((len(pts), 3, 3, 3))
    for l in range(3):
        jl = hat(jr[:, l])  # [J_r e_l]x
        # -R ([J_r e_l]x [p]x J_r + [p]x dJr_l)
        block = -np.einsum(
            "ij,njk->nik", rot, np.einsum("jm,nmk,kl->njl", jl, crosses, jr)
        ) - np.einsum("ij,njk,kl->nil", rot, crosses, djr[l])
        second[:, :, :, l] = block
    # exact in theory; symmetrize to remove rounding asymmetry
    second = 0.5 * (second + second.transpose(0, 1, 3, 2))
    return rotated, first, second


def _hat_batch(pts: np.ndarray) -> np.ndarray:
    n = len(pts)
    out = np.zeros((n, 3, 3))
    out[:, 0, 1] = -pts[:, 2]
    out[:, 0, 2] = pts[:, 1]
    out[:, 1, 0] = pts[:, 2]
    out[:, 1, 2] = -pts[:, 0]
    out[:, 2, 0] = -pts[:, 1]
    out[:, 2, 1] = pts[:, 0]
    return out


def rotmat_to_quat(rot: np.ndarray) -> np.ndarray:
    """Unit quaternion (w, x, y, z) for a rotation matrix, w >= 0."""
    t = np.trace(rot)
    if t > 0:
        s = np.sqrt(t + 1.0) * 2.0
        q = np.array(
            [
                0.25 * s,
                (rot[2, 1] - rot[1, 2]) / s,
                (rot[0, 2] - rot[2, 0]) / s,
                (rot[1, 0] - rot[0, 1]) / s,
            ]
        )
    else:
        i = int(np.argmax(np.diagonal(rot)))
        j, k = (i + 1) % 3, (i + 2) % 3
        s = np.sqrt(max(1.0 + rot[i, i] - rot[j, j] - rot[k, k], 0.0)) * 2.0
        q = np.empty(4)
        q[0] = (rot[k, j] - rot[j, k]) / s
        q[1 + i] = 0.25 * s
        q[1 + j] = (rot[j, i] + rot[i, j]) / s
        q[1 + k] = (rot[k, i] + rot[i, k]) / s
    if q[0] < 0:
        q = -q
    return q / np.linalg.norm(q)


def quat_to_rotmat(q: np.ndarray) -> np.ndarray:
    w, x, y, z = np.asarray(q, dtype=float) / np.linalg.norm(q)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def project_rotation(rot: np.ndarray) -> np.ndarray:
    """Nearest rotation matrix (polar projection); guards drift accumulation."""
    u, _, vt = np.linalg.svd(rot)
    r = u @ vt
    if np.linalg.det(r) < 0:
        u[:, -1] = -u[:, -1]
        r = u @ vt
    return r
