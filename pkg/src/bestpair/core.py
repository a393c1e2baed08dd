"""Dense matrix carriers, the stacked (S, L) variable and the SVD primitive."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np


class DimensionError(ValueError):
    """Raised when operand shapes do not agree."""


class SvdError(RuntimeError):
    """Raised when the SVD routine fails to converge."""


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """Return `a` as a finite, 2-d float64 array (no copy when already one)."""
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise DimensionError(f"{name} must be a non-empty 2-d array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


@dataclass(frozen=True)
class StackedVar:
    """The pair Y = (S; L) of sparse and low-rank parts, both m x n."""

    s: np.ndarray
    l: np.ndarray

    def __post_init__(self):
        s = as_matrix(self.s, "s_part")
        l = as_matrix(self.l, "l_part")
        if s.shape != l.shape:
            raise DimensionError(f"s_part {s.shape} and l_part {l.shape} differ")
        object.__setattr__(self, "s", s)
        object.__setattr__(self, "l", l)

    @classmethod
    def zeros(cls, shape) -> "StackedVar":
        return cls(np.zeros(shape), np.zeros(shape))

    @classmethod
    def from_vector(cls, vec: np.ndarray, shape) -> "StackedVar":
        m, n = shape
        vec = np.asarray(vec, dtype=np.float64)
        return cls(vec[: m * n].reshape(m, n), vec[m * n:].reshape(m, n))

    @property
    def shape(self):
        return self.s.shape

    def to_vector(self) -> np.ndarray:
        """Row-major vectorisation, S block first."""
        return np.concatenate([self.s.ravel(), self.l.ravel()])

    def norm(self) -> float:
        return float(np.sqrt(np.sum(self.s * self.s) + np.sum(self.l * self.l)))

    def __add__(self, other: "StackedVar") -> "StackedVar":
        return StackedVar(self.s + other.s, self.l + other.l)

    def __sub__(self, other: "StackedVar") -> "StackedVar":
        return StackedVar(self.s - other.s, self.l - other.l)

    def __mul__(self, c: float) -> "StackedVar":
        return StackedVar(c * self.s, c * self.l)

    __rmul__ = __mul__


@dataclass(frozen=True)
class ObservationMask:
    """Boolean pattern of observed entries; the projection P_Omega."""

    observed: np.ndarray

    def __post_init__(self):
        obs = np.asarray(self.observed, dtype=bool)
        if obs.ndim != 2:
            raise DimensionError(f"mask must be 2-d, got shape {obs.shape}")
        if not obs.any():
            raise ValueError("mask must observe at least one entry")
        object.__setattr__(self, "observed", obs)

    @classmethod
    def full(cls, shape) -> "ObservationMask":
        return cls(np.ones(shape, dtype=bool))

    @property
    def shape(self):
        return self.observed.shape

    def apply(self, a: np.ndarray) -> np.ndarray:
        if a.shape != self.observed.shape:
            raise DimensionError(f"mask {self.observed.shape} does not match {a.shape}")
        return np.where(self.observed, a, 0.0)


def apply_mask(a: np.ndarray, mask: Optional[ObservationMask]) -> np.ndarray:
    """P_Omega[a], or `a` itself when no mask is given."""
    return a if mask is None else mask.apply(a)


class SvdResult(NamedTuple):
    u: np.ndarray
    sigma: np.ndarray
    v: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return (self.u * self.sigma) @ self.v.T


def svd(a, full: bool = False) -> SvdResult:
    """Singular value decomposition ``a = u @ diag(sigma) @ v.T``.

    Thin by default. `sigma` is nonincreasing; signs of singular vectors are
    whatever LAPACK returns, so callers must be sign-invariant.
    """
    a = as_matrix(a)
    try:
        u, sigma, vt = np.linalg.svd(a, full_matrices=full)
    except np.linalg.LinAlgError as exc:
        raise SvdError(f"SVD did not converge on a {a.shape} matrix") from exc
    return SvdResult(u, sigma, vt.T)


def apply_k(x: StackedVar, mask: Optional[ObservationMask] = None) -> np.ndarray:
    """The linear map K = [Id, Id] (or [P_Omega, P_Omega]) applied to (S; L)."""
    if mask is not None and mask.shape != x.shape:
        raise DimensionError(f"mask {mask.shape} does not match variable {x.shape}")
    return apply_mask(x.s + x.l, mask)
