"""Value/gradient/Hessian container for contact potential terms.

A PotentialEval carries derivatives with respect to the world coordinates
of its *support* vertices only. Gradients are stored (n, 3); Hessians are
dense (3n, 3n) in vertex-major coordinate order. ``infinite`` is an explicit
sentinel so that blending logic can branch without producing 0*inf NaNs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class PotentialEval:
    value: float
    support: np.ndarray  # (n,) vertex ids, sorted ascending
    grad: np.ndarray | None = None  # (n, 3)
    hess: np.ndarray | None = None  # (3n, 3n)
    infinite: bool = False

    @staticmethod
    def infinite_eval(support) -> "PotentialEval":
        return PotentialEval(float("inf"), np.asarray(support, dtype=int), None, None, True)

    @staticmethod
    def zero(support, order: int = 2) -> "PotentialEval":
        support = np.asarray(support, dtype=int)
        n = len(support)
        grad = np.zeros((n, 3)) if order >= 1 else None
        hess = np.zeros((3 * n, 3 * n)) if order >= 2 else None
        return PotentialEval(0.0, support, grad, hess)

    @property
    def order(self) -> int:
        if self.hess is not None:
            return 2
        if self.grad is not None:
            return 1
        return 0

    def grad_for(self, vertex_id: int) -> np.ndarray:
        idx = int(np.searchsorted(self.support, vertex_id))
        return self.grad[idx]

    def scaled(self, factor: float) -> "PotentialEval":
        if self.infinite:
            raise ValueError("cannot scale an infinite potential")
        return PotentialEval(
            self.value * factor,
            self.support,
            None if self.grad is None else self.grad * factor,
            None if self.hess is None else self.hess * factor,
        )


def embed_indices(sub_support: np.ndarray, support: np.ndarray) -> np.ndarray:
    """Positions of sub_support ids inside the (sorted) support array."""
    pos = np.searchsorted(support, sub_support)
    if np.any(pos >= len(support)) or np.any(support[pos] != sub_support):
        raise ValueError("sub-support not contained in support")
    return pos


def accumulate(target: PotentialEval, term: PotentialEval, weight: float = 1.0) -> None:
    """target += weight * term, scattering over the target support in place."""
    if term.infinite:
        raise ValueError("accumulate does not accept infinite terms")
    target.value += weight * term.value
    if target.grad is None:
        return
    pos = embed_indices(term.support, target.support)
    target.grad[pos] += weight * term.grad
    if target.hess is None:
        return
    cpos = (3 * pos[:, None] + np.arange(3)[None, :]).ravel()
    target.hess[np.ix_(cpos, cpos)] += weight * term.hess


def sum_evals(terms: list, support: np.ndarray, order: int) -> PotentialEval:
    """Sum of terms over a common (sorted) support; infinite if any term is."""
    for t in terms:
        if t.infinite:
            return PotentialEval.infinite_eval(support)
    out = PotentialEval.zero(support, order)
    for t in terms:
        accumulate(out, t)
    return out
