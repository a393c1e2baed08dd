"""Projections onto the affine data set X and the rank/sparsity set Y.

X = {(S; L) : P_Omega[S + L] = P_Omega[A]} is convex, so its projection is
exact. Y = {rank(L) <= r, S alpha-sparse by rows and columns} is not; the
L block is projected exactly by truncated SVD and the S block by the usual
row/column threshold approximation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import (DimensionError, ObservationMask, StackedVar, apply_mask,
                   as_matrix, svd)


@dataclass(frozen=True)
class ConstraintSpec:
    """Target rank `rank` and sparsity level `alpha` defining the set Y.

    alpha = 0 is allowed as the degenerate "no sparse part" case.
    """

    rank: int
    alpha: float

    def __post_init__(self):
        if int(self.rank) != self.rank or self.rank < 1:
            raise ValueError(f"target rank must be a positive integer, got {self.rank}")
        if not 0.0 <= self.alpha < 1.0:
            raise ValueError(f"sparsity level must lie in [0, 1), got {self.alpha}")
        object.__setattr__(self, "rank", int(self.rank))
        object.__setattr__(self, "alpha", float(self.alpha))

    def check_shape(self, shape) -> None:
        if self.rank > min(shape):
            raise ValueError(f"target rank {self.rank} exceeds min{tuple(shape)}")

    def budgets(self, shape) -> tuple[int, int]:
        """(entries kept per row, entries kept per column)."""
        m, n = shape
        return budget(self.alpha, n), budget(self.alpha, m)


def budget(alpha: float, length: int) -> int:
    """floor(alpha * length), tolerant of binary round-off such as 0.29 * 100."""
    return int(math.floor(alpha * length + 1e-9))


def _check_same(*arrays):
    shape = arrays[0].shape
    for arr in arrays[1:]:
        if arr.shape != shape:
            raise DimensionError(f"shape mismatch: {shape} vs {arr.shape}")


def project_affine(y: StackedVar, a, mask: Optional[ObservationMask] = None) -> StackedVar:
    """Orthogonal projection of (S; L) onto {P_Omega[S + L] = P_Omega[A]}."""
    a = as_matrix(a, "A")
    _check_same(a, y.s)
    if mask is not None:
        _check_same(a, mask.observed)
    half_resid = 0.5 * apply_mask(a - y.s - y.l, mask)
    return StackedVar(y.s + half_resid, y.l + half_resid)


def hard_threshold_rank(l, r: int) -> np.ndarray:
    """Keep the `r` largest singular values of `l` (Eckart-Young projection)."""
    l = as_matrix(l)
    if not 1 <= r <= min(l.shape):
        raise ValueError(f"rank {r} outside [1, {min(l.shape)}]")
    u, sigma, v = svd(l)
    return (u[:, :r] * sigma[:r]) @ v[:, :r].T


def sparse_project_budget(s, row_budget: int, col_budget: int) -> np.ndarray:
    """Zero every entry that is not in the top `row_budget` magnitudes of its
    row and the top `col_budget` magnitudes of its column.

    Comparison is ``>=`` against the k-th largest magnitude, so exact ties at
    the threshold are all kept.
    """
    s = as_matrix(s)
    m, n = s.shape
    if row_budget <= 0 or col_budget <= 0:
        return np.zeros_like(s)
    row_budget = min(row_budget, n)
    col_budget = min(col_budget, m)
    mag = np.abs(s)
    row_thr = np.partition(mag, n - row_budget, axis=1)[:, n - row_budget]
    col_thr = np.partition(mag, m - col_budget, axis=0)[m - col_budget, :]
    keep = (mag >= row_thr[:, None]) & (mag >= col_thr[None, :])
    return np.where(keep, s, 0.0)


def sparse_project_approx(s, alpha: float) -> np.ndarray:
    """Approximate projection T_alpha onto row/column alpha-sparse matrices.

    alpha = 0 is accepted and yields the zero matrix.
    """
    if not 0.0 <= alpha < 1.0:
        raise ValueError(f"sparsity level must lie in [0, 1), got {alpha}")
    s = as_matrix(s)
    m, n = s.shape
    return sparse_project_budget(s, budget(alpha, n), budget(alpha, m))


def project_constraint_set(y: StackedVar, spec: ConstraintSpec) -> StackedVar:
    spec.check_shape(y.shape)
    return StackedVar(sparse_project_approx(y.s, spec.alpha),
                      hard_threshold_rank(y.l, spec.rank))


def in_constraint_set(y: StackedVar, spec: ConstraintSpec, rank_tol: float = 1e-10) -> bool:
    """Membership test for Y.

    L passes when every singular value past index r is below
    ``rank_tol * sigma_1``; S passes when it is a fixed point of T_alpha.
    """
    sigma = svd(y.l).sigma
    if sigma.size > spec.rank and sigma[0] > 0:
        if np.any(sigma[spec.rank:] > rank_tol * sigma[0]):
            return False
    return bool(np.array_equal(sparse_project_approx(y.s, spec.alpha), y.s))


def infeasibility(y: StackedVar, a, mask: Optional[ObservationMask] = None) -> float:
    """Relative residual ||P_Omega[A - S - L]||_F / ||P_Omega[A]||_F."""
    a = as_matrix(a, "A")
    _check_same(a, y.s)
    denom = np.linalg.norm(apply_mask(a, mask))
    if denom == 0.0:
        raise ValueError("observed part of A has zero norm")
    return float(np.linalg.norm(apply_mask(a - y.s - y.l, mask)) / denom)
