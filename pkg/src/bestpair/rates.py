"""Local linear rate prediction from tangent spaces at a limit point.

Near a limit Y* = (S*; L*) with identified support, one step acts linearly on
the error through

    P = P_TY ((1 - gamma) Id + gamma P_TX) P_TY

where TX = ker K is the tangent space of the affine set and TY is the
product of the support subspace of S* and the tangent space of the
fixed-rank manifold at L*. With constant inertia a, the error pair
(Y_k - Y*, Y_{k-1} - Y*) evolves by the block operator

    Q = [[(1 + a) P, -a P], [Id, 0]]

whose eigenvalues on each eigenvector of P with eigenvalue p are the roots of
``lam**2 - (1 + a) p lam + a p = 0``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .core import ObservationMask, StackedVar, svd


class RateEstimationError(RuntimeError):
    """Raised when a rate quantity cannot be computed reliably."""


class InsufficientDataError(RateEstimationError):
    pass


@dataclass(frozen=True)
class TangentModel:
    """Tangent data at a limit point: S support, top-r singular factors of L."""

    support: np.ndarray
    u: np.ndarray
    v: np.ndarray
    gamma: float = 1.0
    a: float = 0.0
    sigma: Optional[np.ndarray] = None

    @property
    def shape(self):
        return self.support.shape

    @property
    def rank(self) -> int:
        return self.u.shape[1]

    @property
    def rank_gap(self) -> float:
        """sigma_r / sigma_{r+1} of L*; ``inf`` when sigma_{r+1} vanishes."""
        if self.sigma is None or self.sigma.size <= self.rank:
            return math.inf
        tail = self.sigma[self.rank]
        head = self.sigma[self.rank - 1]
        if tail <= 1e-14 * max(self.sigma[0], 1e-300):
            return math.inf
        return float(head / tail)


def tangent_model(y_star: StackedVar, rank: int, gamma: float = 1.0, a: float = 0.0) -> TangentModel:
    """Build the tangent model from a converged iterate."""
    u, sigma, v = svd(y_star.l)
    return TangentModel(y_star.s != 0, u[:, :rank].copy(), v[:, :rank].copy(),
                        float(gamma), float(a), sigma)


def _fixed_rank_tangent(model: TangentModel, h: np.ndarray) -> np.ndarray:
    uh = model.u.T @ h
    hv = h @ model.v
    return model.u @ uh + hv @ model.v.T - model.u @ (uh @ model.v) @ model.v.T


def tangent_project_y(model: TangentModel, y: StackedVar) -> StackedVar:
    """Project onto (support subspace) x (fixed-rank tangent space)."""
    return StackedVar(np.where(model.support, y.s, 0.0), _fixed_rank_tangent(model, y.l))


def tangent_project_x(y: StackedVar, mask: Optional[ObservationMask] = None) -> StackedVar:
    """Project onto ker K, i.e. {P_Omega[S + L] = 0}."""
    half = 0.5 * (y.s + y.l)
    if mask is not None:
        half = np.where(mask.observed, half, 0.0)
    return StackedVar(y.s - half, y.l - half)


@dataclass(frozen=True)
class LinearOperator:
    """Matrix-free linear map on vectors of length `dimension`."""

    dimension: int
    apply: Callable[[np.ndarray], np.ndarray]

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.apply(x)

    def to_dense(self) -> np.ndarray:
        eye = np.eye(self.dimension)
        return np.column_stack([self.apply(eye[:, j]) for j in range(self.dimension)])


def operator_p(model: TangentModel, mask: Optional[ObservationMask] = None) -> LinearOperator:
    """The local step operator P on row-major vec(S; L) of length 2mn."""
    shape = model.shape
    g = model.gamma

    def apply(vec):
        y = tangent_project_y(model, StackedVar.from_vector(vec, shape))
        w = (1.0 - g) * y + g * tangent_project_x(y, mask)
        return tangent_project_y(model, w).to_vector()

    return LinearOperator(2 * shape[0] * shape[1], apply)


def tangent_basis(model: TangentModel) -> np.ndarray:
    """Orthonormal basis (columns) of TY in vec(S; L) coordinates.

    The L block uses {u_i v_j^T : i <= r or j <= r} with U and V completed to
    orthonormal bases, which has mn - (m - r)(n - r) elements.
    """
    m, n = model.shape
    r = model.rank
    uf = np.linalg.qr(model.u, mode="complete")[0]
    vf = np.linalg.qr(model.v, mode="complete")[0]
    uf[:, :r] = model.u
    vf[:, :r] = model.v
    pairs = [(i, j) for i in range(m) for j in range(n) if i < r or j < r]
    b_l = np.column_stack([np.outer(uf[:, i], vf[:, j]).ravel() for i, j in pairs])
    idx = np.flatnonzero(model.support.ravel())
    b_s = np.zeros((m * n, idx.size))
    b_s[idx, np.arange(idx.size)] = 1.0
    top = np.hstack([b_s, np.zeros((m * n, b_l.shape[1]))])
    bottom = np.hstack([np.zeros((m * n, idx.size)), b_l])
    return np.vstack([top, bottom])


def p_eigenvalues(model: TangentModel, mask: Optional[ObservationMask] = None) -> np.ndarray:
    """Full spectrum of P, ascending.

    P vanishes off TY, so its spectrum is that of the compression B^T P B
    (B a basis of TY) padded with zeros.
    """
    basis = tangent_basis(model)
    op = operator_p(model, mask)
    image = np.column_stack([op(basis[:, j]) for j in range(basis.shape[1])])
    compressed = basis.T @ image
    eigs = np.linalg.eigvalsh(0.5 * (compressed + compressed.T))
    zeros = np.zeros(op.dimension - basis.shape[1])
    return np.sort(np.concatenate([eigs, zeros]))


def spectral_radius_p(p: LinearOperator, tol: float = 1e-8, max_iter: int = 200_000,
                      seed: int = 0) -> float:
    """Largest |eigenvalue| of a symmetric operator by power iteration.

    Stops when the extrapolated remaining error, estimated from the ratio of
    successive changes, falls below ``tol / 10`` relative to the estimate;
    the margin covers the ratio estimate being optimistic near clusters.
    """
    rng = np.random.Generator(np.random.PCG64(seed))
    x = rng.standard_normal(p.dimension)
    x /= np.linalg.norm(x)
    est = 0.0
    prev_change = None
    for _ in range(max_iter):
        y = p(x)
        new = float(np.linalg.norm(y))
        if new == 0.0:
            return 0.0
        x = y / new
        change = abs(new - est)
        est = new
        if prev_change is not None and prev_change > 0.0:
            q = min(change / prev_change, 0.999999)
            if change * q / (1.0 - q) <= 0.1 * tol * est and change <= 0.1 * tol * est:
                return est
        elif change == 0.0:
            return est
        prev_change = change
    raise RateEstimationError(f"power iteration did not converge in {max_iter} steps")


def q_roots(p: float, a: float) -> tuple[complex, complex]:
    """Roots of lam^2 - (1 + a) p lam + a p = 0."""
    b = (1.0 + a) * p
    disc = complex(b * b - 4.0 * a * p)
    root = disc ** 0.5
    return (b + root) / 2.0, (b - root) / 2.0


def rho_q(p_eigs: Sequence[float], a: float) -> float:
    """Spectral radius of Q from the eigenvalues of P."""
    if not 0.0 <= a <= 1.0:
        raise ValueError(f"inertia must lie in [0, 1], got {a}")
    best = 0.0
    for p in np.asarray(p_eigs, dtype=np.float64).ravel():
        best = max(best, *(abs(z) for z in q_roots(float(p), a)))
    return float(best)


def fit_empirical_rate(trace, tail_fraction: float = 0.5, floor: float = 1e-13,
                       min_points: int = 10) -> float:
    """Per-iteration contraction factor exp(slope) of log Delta_k on the tail.

    `trace` is an IterateTrace or a plain sequence of Delta_k with Delta_0 at
    index 0. Only Delta_k above `floor` (k >= 1) are used, and of those the
    last `tail_fraction`.
    """
    if not 0.0 < tail_fraction < 1.0:
        raise ValueError(f"tail_fraction must lie in (0, 1), got {tail_fraction}")
    deltas = np.asarray(getattr(trace, "delta", trace), dtype=np.float64)
    ks = np.arange(deltas.size)[1:]
    vals = deltas[1:]
    keep = vals > floor
    ks, vals = ks[keep], vals[keep]
    n_tail = int(math.ceil(tail_fraction * ks.size))
    if n_tail < min_points:
        raise InsufficientDataError(f"{n_tail} usable tail points, need {min_points}")
    ks, vals = ks[-n_tail:], vals[-n_tail:]
    slope = np.polyfit(ks.astype(np.float64), np.log(vals), 1)[0]
    return float(np.exp(slope))
