"""Acceptance checks. Each test prints one PASS/FAIL line and asserts it."""

import time

import numpy as np
import pytest

from bestpair.cli import main
from bestpair.core import ObservationMask, StackedVar
from bestpair.experiments import (SweepConfig, gen_problem, phase_transition, rate_study,
                                  sensitivity_sweep)
from bestpair.projections import (ConstraintSpec, hard_threshold_rank, project_affine,
                                  sparse_project_approx)
from bestpair.rates import (operator_p, p_eigenvalues, rho_q, spectral_radius_p,
                            tangent_model)
from bestpair.solver import SolverParams, check_descent, finite_length_bound, solve

from oracles import brute_force_t_alpha, tx_projector, ty_projector


def verdict(capsys, number, ok, detail):
    with capsys.disabled():
        print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {number}: {detail}")
    assert ok, detail


def test_c01_sparse_projection_oracle(capsys):
    rng = np.random.default_rng(101)
    alphas = [round(0.1 * k, 1) for k in range(1, 10)]
    start = time.perf_counter()
    mismatches = 0
    for i in range(1000):
        s = rng.standard_normal((6, 8))
        if i % 2:
            # small integers force ties at the thresholds
            s = np.round(3 * s)
        alpha = alphas[i % len(alphas)]
        if not np.array_equal(sparse_project_approx(s, alpha), brute_force_t_alpha(s, alpha)):
            mismatches += 1
    elapsed = time.perf_counter() - start
    verdict(capsys, 1, mismatches == 0 and elapsed < 5,
            f"{mismatches}/1000 mismatches against brute force, {elapsed:.2f}s")


def test_c02_projection_invariants(capsys):
    rng = np.random.default_rng(102)
    start = time.perf_counter()
    worst_idem = worst_feas = worst_expand = 0.0
    for i in range(500):
        m, n = rng.integers(2, 9, size=2)
        a = rng.standard_normal((m, n))
        mask = ObservationMask(rng.random((m, n)) < 0.7) if i % 2 else None
        obs = np.ones((m, n), bool) if mask is None else mask.observed
        y1 = StackedVar(rng.standard_normal((m, n)), rng.standard_normal((m, n)))
        y2 = StackedVar(rng.standard_normal((m, n)), rng.standard_normal((m, n)))
        p1, p2 = project_affine(y1, a, mask), project_affine(y2, a, mask)
        worst_idem = max(worst_idem, (project_affine(p1, a, mask) - p1).norm())
        worst_feas = max(worst_feas, float(np.max(np.abs(np.where(obs, p1.s + p1.l - a, 0.0)))))
        worst_expand = max(worst_expand, (p1 - p2).norm() - (y1 - y2).norm())
    affine_ok = worst_idem <= 1e-12 and worst_feas <= 1e-12 and worst_expand <= 1e-12

    rank_ok = True
    worst_gap = -np.inf
    for inst in range(10):
        m, n = rng.integers(4, 13, size=2)
        r = int(rng.integers(1, min(m, n)))
        l = rng.standard_normal((m, n))
        h = hard_threshold_rank(l, r)
        rank_ok &= bool(np.allclose(hard_threshold_rank(h, r), h, atol=1e-10, rtol=0))
        best = np.linalg.norm(l - h)
        u, sv, vt = np.linalg.svd(l, full_matrices=False)
        for k in range(200):
            if k % 2:
                cand = rng.standard_normal((m, r)) @ rng.standard_normal((n, r)).T
            else:
                eps = 10.0 ** rng.uniform(-8, 0)
                uu = u[:, :r] + eps * rng.standard_normal((m, r))
                vv = vt[:r].T + eps * rng.standard_normal((n, r))
                cand = (uu * sv[:r]) @ vv.T
            worst_gap = max(worst_gap, best - np.linalg.norm(l - cand))
    rank_ok &= worst_gap <= 1e-10
    elapsed = time.perf_counter() - start
    verdict(capsys, 2, affine_ok and rank_ok and elapsed < 10,
            f"affine idempotence {worst_idem:.1e}, feasibility {worst_feas:.1e}, "
            f"expansion {worst_expand:.1e}; Eckart-Young worst gap {worst_gap:.1e}; {elapsed:.2f}s")


def _alternating_projections(a, r, alpha, iters):
    # written from scratch against numpy only
    m, n = a.shape
    k_row, k_col = int(np.floor(alpha * n + 1e-9)), int(np.floor(alpha * m + 1e-9))
    s, l = np.zeros_like(a), np.zeros_like(a)
    out = [(s, l)]
    for _ in range(iters):
        h = 0.5 * (a - s - l)
        s, l = s + h, l + h
        u, sv, vt = np.linalg.svd(l, full_matrices=False)
        l = (u[:, :r] * sv[:r]) @ vt.T[:, :r].T
        mag = np.abs(s)
        row_thr = -np.sort(-mag, axis=1)[:, k_row - 1]
        col_thr = -np.sort(-mag, axis=0)[k_col - 1, :]
        s = np.where((mag >= row_thr[:, None]) & (mag >= col_thr[None, :]), s, 0.0)
        out.append((s, l))
    return out


def test_c03_alternating_projections(capsys):
    prob = gen_problem(20, 20, 2, 0.1, seed=103)
    params = SolverParams(gamma=1.0, inertia_a=0.0, inertia_b=0.0, init="zero",
                          max_iter=200, tol_step=1e-300, tol_feas=1e-300)
    seen = []
    solve(prob.a, prob.spec_true, params, callback=lambda k, y: seen.append((y.s, y.l)))
    ref = _alternating_projections(prob.a, 2, 0.1, 200)
    same = len(seen) == len(ref) == 201 and all(
        np.array_equal(s, rs) and np.array_equal(l, rl) for (s, l), (rs, rl) in zip(seen, ref))
    verdict(capsys, 3, same, f"{len(seen) - 1} solver iterations, "
            f"{'bit-identical' if same else 'differs'} to the reference loop")


def test_c04_descent_certificate(capsys):
    params = SolverParams(gamma=0.5, inertia_a=0.1, inertia_b=0.1, nu=0.2)
    monotone = bounded = 0
    cert = None
    for seed in range(10):
        prob = gen_problem(50, 50, 5, 0.05, seed=400 + seed)
        _, trace, cert = solve(prob.a, prob.spec_true, params)
        monotone += check_descent(trace, cert)
        total, bound = finite_length_bound(trace, cert)
        bounded += total <= bound
    ok = abs(cert.delta - 0.075) < 1e-12 and monotone == 10 and bounded == 10
    verdict(capsys, 4, ok, f"delta {cert.delta:.4f}; Psi monotone on {monotone}/10, "
            f"finite-length bound on {bounded}/10")


@pytest.fixture(scope="module")
def recovery_runs():
    params = SolverParams(gamma=1.1, inertia_a=0.5, inertia_b=0.5, max_iter=2000)
    start = time.perf_counter()
    runs = []
    for seed in range(20):
        prob = gen_problem(100, 100, 5, 0.05, seed=500 + seed)
        runs.append((prob, solve(prob.a, prob.spec_true, params)))
    return runs, time.perf_counter() - start


def test_c05_exact_recovery(capsys, recovery_runs):
    runs, elapsed = recovery_runs
    good = sum(res.trace.infeas[-1] < 1e-6 and res.trace.iterations <= 2000 for _, res in runs)
    iters = [res.trace.iterations for _, res in runs]
    verdict(capsys, 5, good >= 18 and elapsed < 120,
            f"{good}/20 seeds below 1e-6, iterations {min(iters)}-{max(iters)}, {elapsed:.1f}s")


def test_c06_support_identification(capsys, recovery_runs):
    runs, _ = recovery_runs
    converged = [(prob, res) for prob, res in runs if res.trace.converged]
    stable = sum(res.trace.support_stable_since < res.trace.iterations for _, res in converged)
    # for context: when the large entries alone stop changing
    large = []
    for prob, res in converged:
        fps = []
        solve(prob.a, prob.spec_true, SolverParams(gamma=1.1, inertia_a=0.5, inertia_b=0.5,
                                                    max_iter=2000),
              callback=lambda k, y: fps.append((np.abs(y.s) > 1.0).tobytes()))
        since = len(fps) - 1
        while since > 0 and fps[since - 1] == fps[-1]:
            since -= 1
        large.append(since)
    verdict(capsys, 6, len(converged) > 0 and stable == len(converged),
            f"exact nonzero pattern stable before the stop on {stable}/{len(converged)} "
            f"converged runs; pattern of |S| > 1 stable from iteration {max(large)} at latest")


def test_c07_rate_prediction(capsys):
    start = time.perf_counter()
    res = rate_study(m=32, r=2, alpha=0.05, gamma=1.0, a_values=(0.0, 0.5), seeds=5, seed=7)
    elapsed = time.perf_counter() - start
    parts, ok = [], elapsed < 60
    for a in (0.0, 0.5):
        rows = [row for row in res["summary"] if row["a"] == a]
        hits = sum(row["trusted"] and row["rel_diff"] <= 0.10 for row in rows)
        worst = max(row["rel_diff"] for row in rows)
        ok &= hits >= 4
        parts.append(f"a={a}: {hits}/5 within 10% (worst {100 * worst:.1f}%)")
    verdict(capsys, 7, ok, "; ".join(parts) + f"; {elapsed:.1f}s")


def test_c08_tangent_operator_oracles(capsys):
    worst_dense = worst_rho_p = worst_rho_q = 0.0
    min_eig = {}
    for gamma in (0.5, 1.0, 1.5, 2.0):
        min_eig[gamma] = np.inf
        for seed in range(5):
            prob = gen_problem(4, 4, 1, 0.25, seed=800 + seed)
            model = tangent_model(prob.truth, 1, gamma, 0.5)
            pty, ptx = ty_projector(model), tx_projector(model.shape)
            dense = pty @ ((1 - gamma) * np.eye(pty.shape[0]) + gamma * ptx) @ pty
            op = operator_p(model)
            worst_dense = max(worst_dense, float(np.max(np.abs(op.to_dense() - dense))))
            eigs = np.linalg.eigvalsh(dense)
            worst_rho_p = max(worst_rho_p, abs(spectral_radius_p(op) - np.max(np.abs(eigs))))
            d = dense.shape[0]
            q = np.block([[1.5 * dense, -0.5 * dense], [np.eye(d), np.zeros((d, d))]])
            ref_q = np.max(np.abs(np.linalg.eigvals(q)))
            worst_rho_q = max(worst_rho_q, abs(rho_q(p_eigenvalues(model), 0.5) - ref_q))
            min_eig[gamma] = min(min_eig[gamma], float(eigs.min()))
    in_range = all(v >= -1e-10 for v in min_eig.values())
    ok = worst_dense <= 1e-10 and worst_rho_p <= 1e-8 and worst_rho_q <= 1e-8 and in_range
    mins = ", ".join(f"gamma={g}: {v:.3f}" for g, v in min_eig.items())
    verdict(capsys, 8, ok, f"dense {worst_dense:.1e}, rho_P {worst_rho_p:.1e}, "
            f"rho_Q {worst_rho_q:.1e}; smallest P eigenvalue {mins}")


def test_c09_phase_strip(capsys):
    start = time.perf_counter()
    grid = phase_transition(50, [2, 5, 10, 25, 45], [0.01, 0.05], trials=3, eps=1e-3, seed=9)
    elapsed = time.perf_counter() - start
    worst = float(grid.success.min())
    verdict(capsys, 9, worst >= 0.8 and elapsed < 300,
            f"lowest cell success {worst:.2f} over {grid.success.size} cells, {elapsed:.1f}s")


def test_c10_misspecification(capsys):
    cfg = SweepConfig(m=100, n=100, rank=5, alpha=0.05, assumed_ranks=(5,),
                      assumed_alphas=(0.02, 0.05), instances=10, target=1e-4,
                      params=SolverParams(max_iter=2000), seed=10)
    rows = sensitivity_sweep("misspec", cfg)["summary"]

    def median(alpha):
        its = [np.inf if r["iters_to_target"] is None else r["iters_to_target"]
               for r in rows if r["assumed_alpha"] == alpha]
        return float(np.median(its))

    under, matched = median(0.02), median(0.05)
    verdict(capsys, 10, under > matched,
            f"median iterations to 1e-4: alpha=0.02 {under}, matched {matched}")


def test_c11_cli_reproducible(capsys, tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("seed = 11\nparallel = 1\nmax_iter = 300\nrank = 2\nalpha = 0.05\n")
    commands = {
        "solve": ["--m", "30"],
        "phase": ["--m", "20", "--grid-r", "1,2", "--grid-alpha", "0.05,0.1", "--trials", "2"],
        "sweep": ["--kind", "init", "--m", "20", "--instances", "1", "--inits", "3"],
        "rate": ["--m", "16", "--rank", "1", "--seeds", "1", "--max-iter", "2000"],
    }
    differing = []
    for name, extra in commands.items():
        dirs = [tmp_path / f"{name}{i}" for i in (1, 2)]
        for d in dirs:
            assert main([name, "--config", str(cfg), *extra, "--out", str(d)]) == 0
        files = sorted(p.name for p in dirs[0].iterdir())
        assert files == sorted(p.name for p in dirs[1].iterdir())
        differing += [f"{name}/{f}" for f in files
                      if (dirs[0] / f).read_bytes() != (dirs[1] / f).read_bytes()]
    verdict(capsys, 11, not differing,
            "all outputs byte-identical" if not differing else f"differ: {differing}")
