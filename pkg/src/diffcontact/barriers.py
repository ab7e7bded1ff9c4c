"""Scalar barrier functions applied to separating-plane margins.

The globally supported reciprocal barrier 1/max(s, 0) is the production
choice. The clamped log barrier vanishes beyond a cutoff; it exists to
reproduce the vanishing-gradient behaviour of locally supported contact
models in A/B comparisons, and is deliberately imperfect (its inner
problem has flat directions far from contact).
"""

from __future__ import annotations

import numpy as np

INF = float("inf")


class ReciprocalBarrier:
    """b(s) = 1/s for s > 0, +inf otherwise. Globally supported on R+."""

    locally_supported = False

    def value(self, s):
        s = np.asarray(s, dtype=float)
        out = np.full_like(s, INF)
        pos = s > 0
        out[pos] = 1.0 / s[pos]
        return out

    def d1(self, s):
        s = np.asarray(s, dtype=float)
        return -1.0 / (s * s)

    def d2(self, s):
        s = np.asarray(s, dtype=float)
        return 2.0 / (s * s * s)


class ClampedLogBarrier:
    """IPC-style b(s) = -(s-delta)^2 log(s/delta) on (0, delta), 0 beyond.

    C2 at s = delta, convex and decreasing on (0, delta), +inf at s <= 0.
    """

    locally_supported = True

    def __init__(self, delta: float = 0.01):
        if delta <= 0:
            raise ValueError("delta must be positive")
        self.delta = float(delta)

    def value(self, s):
        s = np.asarray(s, dtype=float)
        out = np.zeros_like(s)
        out[s <= 0] = INF
        act = (s > 0) & (s < self.delta)
        sa = s[act]
        out[act] = -((sa - self.delta) ** 2) * np.log(sa / self.delta)
        return out

    def d1(self, s):
        s = np.asarray(s, dtype=float)
        out = np.zeros_like(s)
        act = (s > 0) & (s < self.delta)
        sa = s[act]
        out[act] = -2.0 * (sa - self.delta) * np.log(sa / self.delta) - (
            sa - self.delta
        ) ** 2 / sa
        return out

    def d2(self, s):
        s = np.asarray(s, dtype=float)
        out = np.zeros_like(s)
        act = (s > 0) & (s < self.delta)
        sa = s[act]
        out[act] = (
            -2.0 * np.log(sa / self.delta)
            - 4.0 * (sa - self.delta) / sa
            + (sa - self.delta) ** 2 / (sa * sa)
        )
        return out


RECIPROCAL = ReciprocalBarrier()
