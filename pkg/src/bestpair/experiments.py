"""Synthetic problems, recovery metrics and experiment drivers.

Every random draw goes through `make_rng`, a PCG64 stream keyed by
``(seed, experiment, cell, trial, ...)``, so results do not depend on the
order in which a worker pool executes cells.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .core import StackedVar, as_matrix
from .projections import (ConstraintSpec, hard_threshold_rank, infeasibility,
                          sparse_project_approx)
from .rates import (InsufficientDataError, RateEstimationError, fit_empirical_rate,
                    p_eigenvalues, rho_q, tangent_model)
from .solver import SolverParams, solve

# stream ids for make_rng
EXP_PROBLEM, EXP_PHASE, EXP_PARAMS, EXP_MISSPEC, EXP_INIT, EXP_RATE = range(6)

GENERATORS = ("uniform", "gaussian")


def make_rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=key)))


def stream_seed(seed: int, *key: int) -> int:
    """A 63-bit integer seed derived from the keyed stream."""
    return int(make_rng(seed, *key).integers(0, 2 ** 63 - 1))


@dataclass(frozen=True)
class SynthProblem:
    a: np.ndarray
    l_true: np.ndarray
    s_true: np.ndarray
    spec_true: ConstraintSpec
    seed: int

    @property
    def truth(self) -> StackedVar:
        return StackedVar(self.s_true, self.l_true)


def gen_problem(m: int, n: int, r: int, alpha: float, seed: int,
                generator: str = "uniform") -> SynthProblem:
    """Random A = L + S with rank(L) <= r and S in the range of T_alpha.

    ``"uniform"``: L = G1 G2^T with standard normal m x r and n x r factors,
    S = T_alpha(M) with M uniform on [-500, 500).
    ``"gaussian"``: L = H_r(G), S = T_alpha(G') with G, G' standard normal
    m x n; the construction used for the sensitivity sweeps.
    """
    spec = ConstraintSpec(r, alpha)
    spec.check_shape((m, n))
    rng = make_rng(seed, EXP_PROBLEM)
    if generator == "uniform":
        g1 = rng.standard_normal((m, r))
        g2 = rng.standard_normal((n, r))
        l_true = g1 @ g2.T
        raw = rng.uniform(-500.0, 500.0, size=(m, n))
    elif generator == "gaussian":
        l_true = hard_threshold_rank(rng.standard_normal((m, n)), r)
        raw = rng.standard_normal((m, n))
    else:
        raise ValueError(f"unknown generator {generator!r}")
    s_true = sparse_project_approx(raw, alpha)
    return SynthProblem(l_true + s_true, l_true, s_true, spec, seed)


def rel_error(problem: SynthProblem, y_hat: StackedVar) -> float:
    return infeasibility(y_hat, problem.a)


def rmse(l_true, l_hat) -> float:
    """||L - L_hat||_F / sqrt(mn)."""
    l_true = as_matrix(l_true)
    l_hat = as_matrix(l_hat)
    if l_true.shape != l_hat.shape:
        raise ValueError(f"shape mismatch: {l_true.shape} vs {l_hat.shape}")
    return float(np.linalg.norm(l_true - l_hat) / math.sqrt(l_true.size))


def iterations_to(infeas: Sequence[float], target: float) -> Optional[int]:
    """First k with infeasibility below `target`, or None."""
    for k, val in enumerate(infeas):
        if val < target:
            return k
    return None


def _pool_map(fn, jobs, parallel: Optional[int]):
    workers = parallel or os.cpu_count() or 1
    if workers <= 1 or len(jobs) <= 1:
        return [fn(job) for job in jobs]
    with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
        return list(pool.map(fn, jobs))


# --- phase transition -----------------------------------------------------

@dataclass
class GridResult:
    r_values: list
    alpha_values: list
    trials: int
    eps: float
    success: np.ndarray
    mean_rmse: np.ndarray
    rows: list = field(default_factory=list)

    def cell_fraction(self, r, alpha) -> float:
        return float(self.success[self.r_values.index(r), self.alpha_values.index(alpha)])


def _phase_trial(job):
    i, j, t, m, r, alpha, eps, params, seed, generator = job
    # keyed on the cell values so a cell's draws do not depend on the grid layout
    pseed = stream_seed(seed, EXP_PHASE, r, round(alpha * 1e9), t)
    row = {"r": r, "rho_r": r / m, "alpha": alpha, "trial": t, "seed": pseed}
    try:
        prob = gen_problem(m, m, r, alpha, pseed, generator)
        y, trace, _ = solve(prob.a, prob.spec_true, params)
        err = rel_error(prob, y)
        row.update(success=bool(err < eps), rel_error=err, rmse=rmse(prob.l_true, y.l),
                   iterations=trace.iterations, status=trace.status)
    except (ArithmeticError, RuntimeError, ValueError) as exc:
        row.update(success=False, rel_error=float("nan"), rmse=float("nan"),
                   iterations=0, status=f"error: {exc}")
    return (i, j, t), row


def phase_transition(m: int, r_values: Sequence[int], alpha_values: Sequence[float], trials: int,
                     eps: float = 1e-3, params: SolverParams = SolverParams(), seed: int = 0,
                     parallel: Optional[int] = None, generator: str = "uniform") -> GridResult:
    """Success fraction of ``rel_error < eps`` over an (r, alpha) grid."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    if trials < 1:
        raise ValueError("trials must be at least 1")
    r_values, alpha_values = list(r_values), list(alpha_values)
    jobs = [(i, j, t, m, r, alpha, eps, params, seed, generator)
            for i, r in enumerate(r_values) for j, alpha in enumerate(alpha_values)
            for t in range(trials)]
    results = dict(_pool_map(_phase_trial, jobs, parallel))
    success = np.zeros((len(r_values), len(alpha_values)))
    mean_rmse = np.zeros_like(success)
    rows = []
    for i in range(len(r_values)):
        for j in range(len(alpha_values)):
            cell = [results[(i, j, t)] for t in range(trials)]
            success[i, j] = sum(row["success"] for row in cell) / trials
            mean_rmse[i, j] = float(np.mean([row["rmse"] for row in cell]))
            rows.extend(cell)
    return GridResult(r_values, alpha_values, trials, eps, success, mean_rmse, rows)


# --- sensitivity sweeps ---------------------------------------------------

@dataclass(frozen=True)
class SweepConfig:
    """Shared knobs for `sensitivity_sweep`. Unused fields are ignored per kind."""

    m: int = 100
    n: int = 100
    rank: int = 5
    alpha: float = 0.05
    gammas: tuple = (0.5, 1.0, 1.1, 1.5)
    inertias: tuple = (0.0, 0.3, 0.5, 0.7)
    assumed_ranks: tuple = (3, 5, 8)
    assumed_alphas: tuple = (0.02, 0.05, 0.08)
    instances: int = 3
    inits: int = 50
    target: float = 1e-4
    params: SolverParams = SolverParams(max_iter=2000)
    seed: int = 0
    generator: str = "gaussian"
    parallel: Optional[int] = None


def _sweep_run(job):
    key, prob_seed, cfg, r, alpha, params = job
    prob = gen_problem(cfg.m, cfg.n, cfg.rank, cfg.alpha, prob_seed, cfg.generator)
    y, trace, cert = solve(prob.a, ConstraintSpec(r, alpha), params)
    return key, {
        "iterations": trace.iterations,
        "iters_to_target": iterations_to(trace.infeas, cfg.target),
        "rel_error": rel_error(prob, y),
        "rmse": rmse(prob.l_true, y.l),
        "status": trace.status,
        "delta_cert": cert.delta,
        "curve": list(trace.infeas),
    }


def _envelope(curves, stat):
    length = max(len(c) for c in curves)
    padded = np.array([c + [c[-1]] * (length - len(c)) for c in curves])
    return stat(padded, axis=0)


def sensitivity_sweep(kind: str, config: SweepConfig = SweepConfig()) -> dict:
    """Parameter, mis-specification or initialisation sweep.

    Returns ``{"summary": [...], "curves": [...]}``; both are lists of flat
    dicts ready to be written as tables.
    """
    cfg = config
    jobs = []
    if kind == "params":
        for inst in range(cfg.instances):
            pseed = stream_seed(cfg.seed, EXP_PARAMS, inst)
            for g in cfg.gammas:
                for a in cfg.inertias:
                    params = replace(cfg.params, gamma=g, inertia_a=a, inertia_b=a)
                    jobs.append(((inst, g, a), pseed, cfg, cfg.rank, cfg.alpha, params))
    elif kind == "misspec":
        for inst in range(cfg.instances):
            pseed = stream_seed(cfg.seed, EXP_MISSPEC, inst)
            for r in cfg.assumed_ranks:
                for alpha in cfg.assumed_alphas:
                    jobs.append(((inst, r, alpha), pseed, cfg, r, alpha, cfg.params))
    elif kind == "init":
        for inst in range(cfg.instances):
            pseed = stream_seed(cfg.seed, EXP_INIT, inst)
            for run in range(cfg.inits):
                params = replace(cfg.params, init="random",
                                 seed=stream_seed(cfg.seed, EXP_INIT, inst, run))
                jobs.append(((inst, run), pseed, cfg, cfg.rank, cfg.alpha, params))
    else:
        raise ValueError(f"unknown sweep kind {kind!r}")

    results = _pool_map(_sweep_run, jobs, cfg.parallel)
    names = {"params": ("instance", "gamma", "inertia"),
             "misspec": ("instance", "assumed_rank", "assumed_alpha"),
             "init": ("instance", "run")}[kind]
    summary, curves = [], []
    for key, res in results:
        row = dict(zip(names, key))
        row.update({k: v for k, v in res.items() if k != "curve"})
        summary.append(row)
        if kind != "init":
            curves.extend(dict(zip(names, key), k=k, rel_error=v) for k, v in enumerate(res["curve"]))
    if kind == "init":
        for inst in range(cfg.instances):
            runs = [res["curve"] for key, res in results if key[0] == inst]
            best = _envelope(runs, np.min)
            med = _envelope(runs, np.median)
            worst = _envelope(runs, np.max)
            curves.extend({"instance": inst, "k": k, "best": best[k], "median": med[k],
                           "worst": worst[k]} for k in range(best.size))
    return {"summary": summary, "curves": curves}


# --- local rate study -----------------------------------------------------

def _rate_run(job):
    seed_index, a, m, r, alpha, gamma, seed, tail_fraction, max_iter = job
    pseed = stream_seed(seed, EXP_RATE, seed_index)
    prob = gen_problem(m, m, r, alpha, pseed)
    params = SolverParams(gamma=gamma, inertia_a=a, inertia_b=a, tol_step=1e-13,
                          tol_feas=1e-300, max_iter=max_iter)
    y, trace, _ = solve(prob.a, prob.spec_true, params)
    model = tangent_model(y, r, gamma, a)
    eigs = p_eigenvalues(model)
    row = {"seed_index": seed_index, "seed": pseed, "a": a, "gamma": gamma,
           "iterations": trace.iterations, "status": trace.status,
           "rel_error": trace.infeas[-1], "support_stable_since": trace.support_stable_since,
           "rank_gap": model.rank_gap, "rho_p": float(np.max(np.abs(eigs))),
           "rho_q": rho_q(eigs, a)}
    try:
        row["fitted"] = fit_empirical_rate(trace, tail_fraction)
    except (InsufficientDataError, RateEstimationError):
        row["fitted"] = float("nan")
    row["rel_diff"] = abs(row["fitted"] - row["rho_q"]) / row["rho_q"] if row["rho_q"] > 0 else float("nan")
    row["trusted"] = bool(row["rank_gap"] > 10.0 and trace.converged and math.isfinite(row["fitted"]))
    return row, list(trace.delta)


def rate_study(m: int = 32, r: int = 2, alpha: float = 0.05, gamma: float = 1.0,
               a_values: Sequence[float] = (0.0, 0.5), seeds: int = 5, seed: int = 0,
               tail_fraction: float = 0.5, max_iter: int = 5000,
               parallel: Optional[int] = None) -> dict:
    """Predicted (rho_Q) versus fitted contraction factor per seed and inertia.

    Returns ``{"summary": [...], "deltas": [...]}`` where the second table
    holds log10 Delta_k for every run.
    """
    jobs = [(i, float(a), m, r, alpha, gamma, seed, tail_fraction, max_iter)
            for i in range(seeds) for a in a_values]
    results = _pool_map(_rate_run, jobs, parallel)
    summary, deltas = [], []
    for row, delta in results:
        summary.append(row)
        deltas.extend({"seed_index": row["seed_index"], "a": row["a"], "k": k,
                       "log10_delta": math.log10(d) if d > 0 else float("-inf"),
                       "rho_q": row["rho_q"], "fitted": row["fitted"]}
                      for k, d in enumerate(delta))
    return {"summary": summary, "deltas": deltas}
