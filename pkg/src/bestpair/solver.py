"""Inertial proximal gradient iteration for the best-pair RPCA problem.

The objective is ``iota_Y(Y) + dist(Y, X)**2 / 2``: the indicator of the
rank/sparsity set plus the Moreau envelope of the affine data set. One step
reads::

    Za = Y_k + a_k (Y_k - Y_{k-1})
    Zb = Y_k + b_k (Y_k - Y_{k-1})
    Y_{k+1} = P_Y(Za - gamma (Zb - P_X(Zb)))

With ``variant="y"`` the roles of the two sets are swapped (envelope on Y,
indicator on X). gamma = 1 and a = b = 0 is plain alternating projections.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional, Sequence, Union

import numpy as np

from .core import ObservationMask, StackedVar, SvdError, apply_k, apply_mask, as_matrix
from .projections import (ConstraintSpec, hard_threshold_rank, in_constraint_set,
                          project_affine, project_constraint_set, sparse_project_approx)

Schedule = Union[float, Sequence[float]]

VARIANTS = ("x", "y")
INITS = ("spectral", "zero", "random")

# gradient of the index-1 Moreau envelope of a convex indicator is 1-Lipschitz
LIPSCHITZ = 1.0


def _schedule_values(sched: Schedule) -> np.ndarray:
    vals = np.atleast_1d(np.asarray(sched, dtype=np.float64))
    if vals.ndim != 1 or vals.size == 0:
        raise ValueError("inertia schedule must be a scalar or a non-empty sequence")
    return vals


@dataclass(frozen=True)
class SolverParams:
    """Step size, inertia, stopping rule and start point for `solve`.

    `inertia_a` / `inertia_b` are either constants or explicit per-iteration
    schedules; past the end of a schedule its last value is held.
    """

    gamma: float = 1.1
    inertia_a: Schedule = 0.5
    inertia_b: Schedule = 0.5
    nu: float = 0.1
    max_iter: int = 5000
    tol_step: float = 1e-9
    tol_feas: float = 1e-7
    variant: str = "x"
    init: str = "spectral"
    seed: int = 0
    check_membership: bool = False

    def __post_init__(self):
        if not 0.0 < self.gamma <= 2.0:
            raise ValueError(f"gamma must lie in (0, 2], got {self.gamma}")
        for name in ("inertia_a", "inertia_b"):
            vals = _schedule_values(getattr(self, name))
            if np.any(vals < 0.0) or np.any(vals > 1.0) or not np.all(np.isfinite(vals)):
                raise ValueError(f"{name} values must lie in [0, 1]")
            if isinstance(getattr(self, name), (list, np.ndarray)):
                object.__setattr__(self, name, tuple(float(v) for v in vals))
        if not self.nu > 0.0:
            raise ValueError(f"nu must be positive, got {self.nu}")
        if int(self.max_iter) != self.max_iter or self.max_iter < 1:
            raise ValueError(f"max_iter must be a positive integer, got {self.max_iter}")
        if not (self.tol_step > 0.0 and self.tol_feas > 0.0):
            raise ValueError("tolerances must be positive")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.init not in INITS:
            raise ValueError(f"init must be one of {INITS}, got {self.init!r}")

    @property
    def lipschitz(self) -> float:
        return LIPSCHITZ

    def a_at(self, k: int) -> float:
        vals = _schedule_values(self.inertia_a)
        return float(vals[min(k, vals.size - 1)])

    def b_at(self, k: int) -> float:
        vals = _schedule_values(self.inertia_b)
        return float(vals[min(k, vals.size - 1)])


@dataclass(frozen=True)
class Certificate:
    """Parameter condition delta = beta_lower - alpha_upper > 0 for descent."""

    beta_lower: float
    alpha_upper: float
    delta: float

    @property
    def satisfied(self) -> bool:
        return self.delta > 0.0


def certificate(params: SolverParams) -> Certificate:
    """Evaluate beta_k and alpha_k over the inertia schedule.

    beta_k  = (1 - gamma L - a_k - nu) / (2 gamma)
    alpha_k = (gamma b_k^2 L^2 + nu a_k) / (2 nu gamma)
    """
    g, nu, lip = params.gamma, params.nu, LIPSCHITZ
    a = _schedule_values(params.inertia_a)
    b = _schedule_values(params.inertia_b)
    size = max(a.size, b.size)
    a = np.concatenate([a, np.full(size - a.size, a[-1])])
    b = np.concatenate([b, np.full(size - b.size, b[-1])])
    beta = (1.0 - g * lip - a - nu) / (2.0 * g)
    alpha = (g * b ** 2 * lip ** 2 + nu * a) / (2.0 * nu * g)
    beta_lower, alpha_upper = float(beta.min()), float(alpha.max())
    return Certificate(beta_lower, alpha_upper, beta_lower - alpha_upper)


def merit_phi(y: StackedVar, a, mask: Optional[ObservationMask], spec: ConstraintSpec) -> float:
    """iota_Y(y) + dist(y, X)^2 / 2; ``inf`` when y is outside Y."""
    if not in_constraint_set(y, spec):
        return float("inf")
    return 0.5 * (y - project_affine(y, a, mask)).norm() ** 2


def step(y_k: StackedVar, y_km1: StackedVar, a_k: float, b_k: float, gamma: float,
         variant: str, a, mask: Optional[ObservationMask], spec: ConstraintSpec) -> StackedVar:
    """One inertial proximal gradient update."""
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    diff = y_k - y_km1
    za = y_k + a_k * diff
    zb = y_k + b_k * diff
    inner = project_affine(zb, a, mask) if variant == "x" else project_constraint_set(zb, spec)
    # za - gamma (zb - inner), grouped so that gamma = 1, a_k = b_k gives exactly inner
    w = (za - zb) + (1.0 - gamma) * zb + gamma * inner
    return project_constraint_set(w, spec) if variant == "x" else project_affine(w, a, mask)


def support_fingerprint(s: np.ndarray) -> str:
    """Short hash of the nonzero pattern of `s` (shape included)."""
    h = hashlib.blake2b(digest_size=8)
    h.update(np.asarray(s.shape, dtype=np.int64).tobytes())
    h.update(np.packbits(s != 0).tobytes())
    return h.hexdigest()


@dataclass
class IterateTrace:
    """Per-iteration diagnostics; index k = 0 is the starting point."""

    delta: list = field(default_factory=list)
    infeas: list = field(default_factory=list)
    phi: list = field(default_factory=list)
    psi: list = field(default_factory=list)
    fingerprint: list = field(default_factory=list)
    status: str = "running"
    alpha_upper: float = 0.0

    def append(self, delta, infeas, phi, fingerprint):
        self.delta.append(float(delta))
        self.infeas.append(float(infeas))
        self.phi.append(float(phi))
        self.psi.append(float(phi) + self.alpha_upper * float(delta) ** 2)
        self.fingerprint.append(fingerprint)

    def __len__(self):
        return len(self.delta)

    @property
    def iterations(self) -> int:
        return len(self.delta) - 1

    @property
    def converged(self) -> bool:
        return self.status.startswith("converged")

    @property
    def support_stable_since(self) -> Optional[int]:
        """First k from which the support fingerprint never changes again."""
        if not self.fingerprint:
            return None
        last = self.fingerprint[-1]
        k = len(self.fingerprint) - 1
        while k > 0 and self.fingerprint[k - 1] == last:
            k -= 1
        return k


class SolveResult(NamedTuple):
    y: StackedVar
    trace: IterateTrace
    certificate: Certificate


def initial_point(a: np.ndarray, spec: ConstraintSpec, params: SolverParams) -> StackedVar:
    """Y_0. "spectral" peels the sparse part first: S_0 = T_alpha(A),
    L_0 = H_r(A - S_0); taking H_r(A) first lets large outliers leak into L_0."""
    if params.init == "zero":
        return StackedVar.zeros(a.shape)
    if params.init == "random":
        rng = np.random.Generator(np.random.PCG64(params.seed))
        raw = StackedVar(rng.standard_normal(a.shape), rng.standard_normal(a.shape))
        return project_constraint_set(raw, spec)
    s0 = sparse_project_approx(a, spec.alpha)
    return StackedVar(s0, hard_threshold_rank(a - s0, spec.rank))


def solve(a, spec: ConstraintSpec, params: SolverParams = SolverParams(),
          mask: Optional[ObservationMask] = None,
          callback: Optional[Callable[[int, StackedVar], None]] = None) -> SolveResult:
    """Run the iteration from Y_{-1} = Y_0 until a stopping rule fires.

    Stops when ``Delta_k / max(1, ||Y_k||) < tol_step`` or the relative
    infeasibility drops below ``tol_feas``; otherwise after ``max_iter`` steps
    with ``trace.status == "max_iter"``. For ``variant="y"`` the iterates live
    in X and the returned pair is their projection onto Y. `callback`, if
    given, sees every raw iterate ``(k, Y_k)`` including k = 0.
    """
    a = as_matrix(a, "A")
    spec.check_shape(a.shape)
    if mask is not None and mask.shape != a.shape:
        raise ValueError(f"mask {mask.shape} does not match A {a.shape}")
    cert = certificate(params)
    trace = IterateTrace(alpha_upper=cert.alpha_upper)
    pa = apply_mask(a, mask)
    a_norm = float(np.linalg.norm(pa))
    scale = a_norm if a_norm > 0.0 else 1.0

    def measure(y: StackedVar, delta: float):
        if params.variant == "x":
            out = y
            phi = 0.5 * (y - project_affine(y, a, mask)).norm() ** 2
        else:
            out = project_constraint_set(y, spec)
            phi = 0.5 * (y - out).norm() ** 2
        infeas = float(np.linalg.norm(pa - apply_k(out, mask))) / scale
        trace.append(delta, infeas, phi, support_fingerprint(out.s))
        return out, infeas

    def check(y: StackedVar, k: int):
        if params.variant == "x":
            ok = in_constraint_set(y, spec)
        else:
            ok = np.linalg.norm(apply_k(y, mask) - pa) <= 1e-10 * scale
        if not ok:
            raise RuntimeError(f"iterate {k} left the {params.variant.upper()} set")

    try:
        y_cur = initial_point(a, spec, params)
        if params.variant == "y":
            y_cur = project_affine(y_cur, a, mask)
    except SvdError as exc:
        raise SvdError(f"iteration 0: {exc}") from exc
    y_prev = y_cur
    out, _ = measure(y_cur, 0.0)
    if callback is not None:
        callback(0, y_cur)

    for k in range(params.max_iter):
        try:
            y_next = step(y_cur, y_prev, params.a_at(k), params.b_at(k), params.gamma,
                          params.variant, a, mask, spec)
        except SvdError as exc:
            raise SvdError(f"iteration {k + 1}: {exc}") from exc
        if params.check_membership:
            check(y_next, k + 1)
        delta = (y_next - y_cur).norm()
        y_prev, y_cur = y_cur, y_next
        out, infeas = measure(y_cur, delta)
        if callback is not None:
            callback(k + 1, y_cur)
        if delta / max(1.0, y_cur.norm()) < params.tol_step:
            trace.status = "converged_step"
            break
        if infeas < params.tol_feas:
            trace.status = "converged_feas"
            break
    else:
        trace.status = "max_iter"
    return SolveResult(out, trace, cert)


def check_descent(trace: IterateTrace, cert: Certificate, rel_slack: float = 1e-12) -> bool:
    """True iff Psi(Z_k) = Phi(Y_k) + alpha_upper Delta_k^2 never increases."""
    phi = np.asarray(trace.phi)
    delta = np.asarray(trace.delta)
    if not np.all(np.isfinite(phi)):
        return False
    psi = phi + cert.alpha_upper * delta ** 2
    return bool(np.all(psi[1:] <= psi[:-1] + rel_slack * (1.0 + np.abs(psi[:-1]))))


def finite_length_bound(trace: IterateTrace, cert: Certificate) -> tuple[float, float]:
    """(sum of Delta_k^2, Phi(Y_0) / delta). Only meaningful when delta > 0."""
    total = float(np.sum(np.square(trace.delta)))
    bound = trace.phi[0] / cert.delta if cert.delta > 0 else float("inf")
    return total, bound
