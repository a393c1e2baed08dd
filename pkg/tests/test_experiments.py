import math

import numpy as np
import pytest

from bestpair.experiments import (SweepConfig, gen_problem, iterations_to, make_rng,
                                  phase_transition, rate_study, rmse, sensitivity_sweep,
                                  stream_seed)
from bestpair.projections import sparse_project_approx
from bestpair.solver import SolverParams


@pytest.mark.parametrize("generator", ["uniform", "gaussian"])
def test_gen_problem_structure(generator):
    prob = gen_problem(30, 20, 3, 0.1, seed=5, generator=generator)
    assert prob.a.shape == (30, 20)
    assert np.linalg.matrix_rank(prob.l_true) == 3
    np.testing.assert_array_equal(sparse_project_approx(prob.s_true, 0.1), prob.s_true)
    assert np.all((prob.s_true != 0).sum(axis=1) <= 2)
    assert np.all((prob.s_true != 0).sum(axis=0) <= 3)
    np.testing.assert_array_equal(prob.a, prob.l_true + prob.s_true)


def test_gen_problem_deterministic():
    p1 = gen_problem(10, 10, 2, 0.1, seed=3)
    p2 = gen_problem(10, 10, 2, 0.1, seed=3)
    p3 = gen_problem(10, 10, 2, 0.1, seed=4)
    np.testing.assert_array_equal(p1.a, p2.a)
    assert not np.array_equal(p1.a, p3.a)


def test_gen_problem_rank_one_and_errors():
    prob = gen_problem(8, 8, 1, 0.0, seed=0)
    assert np.linalg.matrix_rank(prob.l_true) == 1
    assert not prob.s_true.any()
    with pytest.raises(ValueError):
        gen_problem(4, 4, 5, 0.1, seed=0)
    with pytest.raises(ValueError):
        gen_problem(4, 4, 1, 0.1, seed=0, generator="cauchy")


def test_streams_are_independent():
    assert stream_seed(0, 1, 2) != stream_seed(0, 2, 1)
    a = make_rng(0, 1).standard_normal(4)
    b = make_rng(0, 1).standard_normal(4)
    np.testing.assert_array_equal(a, b)


def test_rmse_examples():
    assert rmse([[1.0]], [[4.0]]) == 3.0
    assert rmse(np.ones((2, 2)), np.zeros((2, 2))) == 1.0
    with pytest.raises(ValueError):
        rmse(np.ones((2, 2)), np.ones((2, 3)))


def test_iterations_to():
    assert iterations_to([1.0, 0.1, 1e-5], 1e-4) == 2
    assert iterations_to([1.0, 0.5], 1e-4) is None


def test_phase_trivial_threshold():
    grid = phase_transition(12, [1, 2], [0.05, 0.1], trials=1, eps=math.inf,
                            params=SolverParams(max_iter=5), parallel=1)
    assert grid.success.shape == (2, 2)
    assert np.all(grid.success == 1.0)
    assert len(grid.rows) == 4
    assert {row["r"] for row in grid.rows} == {1, 2}


def test_phase_cells_independent_of_grid():
    params = SolverParams(max_iter=50)
    big = phase_transition(12, [1, 2], [0.05, 0.1], trials=2, params=params, parallel=1)
    small = phase_transition(12, [2], [0.1], trials=2, params=params, parallel=1)
    cell = [row for row in big.rows if row["r"] == 2 and row["alpha"] == 0.1]
    assert cell == small.rows
    assert len({row["seed"] for row in big.rows}) == 8


def test_phase_parallel_matches_serial():
    params = SolverParams(max_iter=30)
    kw = dict(m=12, r_values=[1, 2], alpha_values=[0.1], trials=2, params=params)
    serial = phase_transition(parallel=1, **kw)
    pooled = phase_transition(parallel=2, **kw)
    assert serial.rows == pooled.rows


def test_phase_validation():
    with pytest.raises(ValueError):
        phase_transition(10, [1], [0.1], trials=0)
    with pytest.raises(ValueError):
        phase_transition(10, [1], [0.1], trials=1, eps=0.0)


SMALL = SweepConfig(m=20, n=20, rank=2, alpha=0.05, gammas=(0.5, 1.1), inertias=(0.0, 0.5),
                    assumed_ranks=(1, 2), assumed_alphas=(0.05,), instances=1, inits=3,
                    params=SolverParams(max_iter=200), parallel=1)


def test_sweep_params():
    out = sensitivity_sweep("params", SMALL)
    assert len(out["summary"]) == 4
    assert {(r["gamma"], r["inertia"]) for r in out["summary"]} == {
        (0.5, 0.0), (0.5, 0.5), (1.1, 0.0), (1.1, 0.5)}
    assert all(r["k"] >= 0 for r in out["curves"])


def test_sweep_misspec_and_init():
    mis = sensitivity_sweep("misspec", SMALL)
    assert len(mis["summary"]) == 2
    init = sensitivity_sweep("init", SMALL)
    assert len(init["summary"]) == 3
    for row in init["curves"]:
        assert row["best"] <= row["median"] <= row["worst"]
    with pytest.raises(ValueError):
        sensitivity_sweep("bogus", SMALL)


def test_rate_study_rows():
    out = rate_study(m=12, r=1, alpha=0.05, a_values=(0.0,), seeds=1, parallel=1, max_iter=2000)
    (row,) = out["summary"]
    assert row["a"] == 0.0
    assert 0.0 <= row["rho_q"] <= 1.0
    assert row["rho_p"] == pytest.approx(row["rho_q"], abs=1e-6)
    assert out["deltas"]


def test_rate_study_untrusted_without_fit():
    # alpha * m < 1 leaves S empty; the run converges at once and nothing can be fitted
    out = rate_study(m=12, r=1, alpha=0.05, a_values=(0.0,), seeds=1, parallel=1)
    (row,) = out["summary"]
    assert math.isnan(row["fitted"])
    assert row["trusted"] is False
