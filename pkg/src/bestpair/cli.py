"""Command-line entry point: ``bestpair {solve,phase,sweep,rate}``.

Settings come from defaults, then an optional ``--config`` file of
``key = value`` lines, then explicit flags. Exit codes: 0 done, 2 bad
configuration, 3 I/O failure, 4 numerical failure. A solve that hits
``max_iter`` still exits 0; its status is in the report.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import io
from .core import ObservationMask, SvdError
from .experiments import (SweepConfig, gen_problem, phase_transition, rate_study, rmse,
                          sensitivity_sweep)
from .projections import ConstraintSpec, infeasibility
from .rates import RateEstimationError
from .solver import INITS, SolverParams, solve

log = logging.getLogger("bestpair")

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4


def int_list(text: str) -> list[int]:
    """'2,5,10' or MATLAB-style 'start:step:stop' (inclusive)."""
    text = text.strip()
    if ":" in text:
        start, stepv, stop = (int(p) for p in text.split(":"))
        if stepv <= 0:
            raise ValueError("step must be positive")
        return list(range(start, stop + 1, stepv))
    return [int(p) for p in text.split(",") if p.strip()]


def float_list(text: str) -> list[float]:
    """'0.01,0.05' or 'linspace(start,stop,num)'."""
    text = text.strip()
    if text.startswith("linspace(") and text.endswith(")"):
        start, stop, num = text[len("linspace("):-1].split(",")
        return [float(v) for v in np.linspace(float(start), float(stop), int(num))]
    return [float(p) for p in text.split(",") if p.strip()]


def _bool(text: str) -> bool:
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


# name -> (type, default, help); shared by every sub-command
OPTIONS = {
    "gamma": (float, 1.1, "step size in (0, 2]"),
    "inertia_a": (float, 0.5, "inertia a_k (constant)"),
    "inertia_b": (float, 0.5, "inertia b_k (constant)"),
    "nu": (float, 0.1, "certificate parameter nu > 0"),
    "rank": (int, 5, "target rank r"),
    "alpha": (float, 0.05, "target sparsity level alpha"),
    "eps": (float, 1e-3, "success threshold on relative error"),
    "tol_step": (float, 1e-9, "relative step stopping tolerance"),
    "tol_feas": (float, 1e-7, "relative infeasibility stopping tolerance"),
    "max_iter": (int, 5000, "iteration cap"),
    "variant": (str, "x", "envelope on X (x) or on Y (y)"),
    "init": (str, "spectral", "starting point: " + "|".join(INITS)),
    "seed": (int, 0, "base seed"),
    "mask": (str, None, "observation mask matrix file (nonzero = observed)"),
    "format": (str, "csv", "matrix file format: csv|bin"),
    "out": (str, "out", "output directory"),
    "trials": (int, 3, "trials per phase-transition cell"),
    "grid_r": (int_list, [2, 5, 10, 25, 45], "ranks, '2,5,10' or 'start:step:stop'"),
    "grid_alpha": (float_list, [0.01, 0.05], "alphas, '0.01,0.05' or 'linspace(a,b,n)'"),
    "parallel": (int, None, "worker processes (default: all cores)"),
    "input": (str, None, "input matrix A (solve); generated when absent"),
    "m": (int, None, "rows of generated problems"),
    "n": (int, None, "columns of generated problems"),
    "generator": (str, None, "synthetic generator: uniform|gaussian"),
    "kind": (str, "params", "sweep kind: params|misspec|init"),
    "instances": (int, 3, "problem instances per sweep"),
    "inits": (int, 50, "random starts per instance (init sweep)"),
    "target": (float, 1e-4, "relative-error target for iteration counts"),
    "seeds": (int, 5, "seeds in the rate study"),
    "a_values": (float_list, [0.0, 0.5], "constant inertias in the rate study"),
    "full_grid": (_bool, False, "phase: full m=200, r=5:5:200, 40 alphas, 5 trials"),
    "check_membership": (_bool, False, "verify set membership every iteration"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bestpair", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (("solve", "decompose one matrix"),
                            ("phase", "phase-transition grid"),
                            ("sweep", "sensitivity sweep"),
                            ("rate", "local linear rate study")):
        p = sub.add_parser(name, help=help_text, parents=[common])
        p.add_argument("--config", help="key = value configuration file")
        for key, (typ, _, help_opt) in OPTIONS.items():
            flag = "--" + key.replace("_", "-")
            if typ is _bool:
                p.add_argument(flag, type=_bool, nargs="?", const=True, default=None, help=help_opt)
            else:
                p.add_argument(flag, type=typ, default=None, help=help_opt)
    return parser


def resolve(args) -> dict:
    """Defaults < config file < flags."""
    cfg = {key: default for key, (_, default, _) in OPTIONS.items()}
    if args.config:
        for key, raw in io.read_config(args.config).items():
            if key not in OPTIONS:
                raise io.ConfigError(f"unknown config key {key!r}")
            try:
                cfg[key] = OPTIONS[key][0](raw)
            except ValueError as exc:
                raise io.ConfigError(f"config key {key!r}: {exc}") from None
    for key in OPTIONS:
        val = getattr(args, key)
        if val is not None:
            cfg[key] = val
    if cfg["format"] not in ("csv", "bin"):
        raise io.ConfigError(f"--format must be csv or bin, got {cfg['format']!r}")
    if cfg["generator"] not in (None, "uniform", "gaussian"):
        raise io.ConfigError(f"--generator must be uniform or gaussian, got {cfg['generator']!r}")
    if cfg["parallel"] is not None and cfg["parallel"] < 1:
        raise io.ConfigError("--parallel must be at least 1")
    return cfg


def solver_params(cfg) -> SolverParams:
    return SolverParams(gamma=cfg["gamma"], inertia_a=cfg["inertia_a"], inertia_b=cfg["inertia_b"],
                        nu=cfg["nu"], max_iter=cfg["max_iter"], tol_step=cfg["tol_step"],
                        tol_feas=cfg["tol_feas"], variant=cfg["variant"], init=cfg["init"],
                        seed=cfg["seed"], check_membership=cfg["check_membership"])


def _cert_dict(cert):
    return {"beta_lower": cert.beta_lower, "alpha_upper": cert.alpha_upper,
            "delta": cert.delta, "satisfied": cert.satisfied}


def cmd_solve(cfg) -> int:
    params = solver_params(cfg)
    spec = ConstraintSpec(cfg["rank"], cfg["alpha"])
    out = Path(cfg["out"])
    truth = None
    if cfg["input"]:
        a = io.read_matrix(cfg["input"])
    else:
        m = cfg["m"] or 100
        prob = gen_problem(m, cfg["n"] or m, spec.rank, spec.alpha, cfg["seed"],
                           cfg["generator"] or "uniform")
        a, truth = prob.a, prob
    spec.check_shape(a.shape)
    mask = None
    if cfg["mask"]:
        observed = io.read_matrix(cfg["mask"]) != 0
        if observed.shape != a.shape:
            raise io.ConfigError(f"mask shape {observed.shape} does not match A {a.shape}")
        mask = ObservationMask(observed)
    if not np.any((a if mask is None else mask.apply(a)) != 0):
        raise io.ConfigError("observed part of A is zero")

    y, trace, cert = solve(a, spec, params, mask)
    ext = cfg["format"]
    io.write_matrix(y.s, out / f"S.{ext}", ext)
    io.write_matrix(y.l, out / f"L.{ext}", ext)
    io.write_table(({"k": k, "delta": trace.delta[k], "rel_error": trace.infeas[k],
                     "phi": trace.phi[k], "psi": trace.psi[k], "support": trace.fingerprint[k]}
                    for k in range(len(trace))), out / "trace.csv")
    report = {
        "command": "solve",
        "shape": list(a.shape),
        "rank": spec.rank,
        "alpha": spec.alpha,
        "params": {k: cfg[k] for k in ("gamma", "inertia_a", "inertia_b", "nu", "max_iter",
                                       "tol_step", "tol_feas", "variant", "init", "seed")},
        "status": trace.status,
        "converged": trace.converged,
        "iterations": trace.iterations,
        "rel_error": infeasibility(y, a, mask),
        "support_stable_since": trace.support_stable_since,
        "certificate": _cert_dict(cert),
    }
    if truth is not None:
        report["rmse"] = rmse(truth.l_true, y.l)
    io.write_report(report, out / "report.json")
    log.info("solve: %s after %d iterations, rel_error %.3e", trace.status, trace.iterations,
             report["rel_error"])
    return EXIT_OK


def cmd_phase(cfg) -> int:
    params = solver_params(cfg)
    if cfg["full_grid"]:
        m, r_values, alphas, trials = 200, list(range(5, 201, 5)), float_list("linspace(0,0.99,40)"), 5
    else:
        m, r_values, alphas, trials = cfg["m"] or 50, cfg["grid_r"], cfg["grid_alpha"], cfg["trials"]
    for r in r_values:
        ConstraintSpec(r, 0.0).check_shape((m, m))
    for alpha in alphas:
        ConstraintSpec(1, alpha)
    grid = phase_transition(m, r_values, alphas, trials, cfg["eps"], params, cfg["seed"],
                            cfg["parallel"], cfg["generator"] or "uniform")
    out = Path(cfg["out"])
    io.write_table(grid.rows, out / "phase.csv",
                   ["r", "rho_r", "alpha", "trial", "seed", "success", "rel_error", "rmse",
                    "iterations", "status"])
    io.write_table(({"r": r, "rho_r": r / m, "alpha": alpha,
                     "success_fraction": grid.success[i, j], "mean_rmse": grid.mean_rmse[i, j],
                     "trials": trials, "eps": cfg["eps"]}
                    for i, r in enumerate(r_values) for j, alpha in enumerate(alphas)),
                   out / "phase_summary.csv")
    return EXIT_OK


def cmd_sweep(cfg) -> int:
    if cfg["kind"] not in ("params", "misspec", "init"):
        raise io.ConfigError(f"--kind must be params, misspec or init, got {cfg['kind']!r}")
    params = solver_params(cfg)
    m = cfg["m"] or 100
    ConstraintSpec(cfg["rank"], cfg["alpha"]).check_shape((m, cfg["n"] or m))
    sweep = SweepConfig(m=m, n=cfg["n"] or m, rank=cfg["rank"], alpha=cfg["alpha"],
                        assumed_ranks=tuple(cfg["grid_r"]), assumed_alphas=tuple(cfg["grid_alpha"]),
                        instances=cfg["instances"], inits=cfg["inits"], target=cfg["target"],
                        params=params, seed=cfg["seed"], generator=cfg["generator"] or "gaussian",
                        parallel=cfg["parallel"])
    if cfg["kind"] == "params":
        sweep = replace(sweep, gammas=(0.5, 1.0, 1.1, 1.5, 1.9), inertias=(0.0, 0.3, 0.5, 0.7))
    res = sensitivity_sweep(cfg["kind"], sweep)
    out = Path(cfg["out"])
    io.write_table(res["summary"], out / f"sweep_{cfg['kind']}.csv")
    io.write_table(res["curves"], out / f"sweep_{cfg['kind']}_curves.csv")
    return EXIT_OK


def cmd_rate(cfg) -> int:
    m = cfg["m"] or 32
    rank = cfg["rank"] if cfg["_rank_set"] else 2
    gamma = cfg["gamma"] if cfg["_gamma_set"] else 1.0
    ConstraintSpec(rank, cfg["alpha"]).check_shape((m, m))
    SolverParams(gamma=gamma)
    for a in cfg["a_values"]:
        if not 0.0 <= a <= 1.0:
            raise io.ConfigError(f"inertia {a} outside [0, 1]")
    res = rate_study(m, rank, cfg["alpha"], gamma, cfg["a_values"], cfg["seeds"], cfg["seed"],
                     max_iter=cfg["max_iter"], parallel=cfg["parallel"])
    out = Path(cfg["out"])
    io.write_table(res["summary"], out / "rate.csv")
    io.write_table(res["deltas"], out / "rate_deltas.csv")
    return EXIT_OK


COMMANDS = {"solve": cmd_solve, "phase": cmd_phase, "sweep": cmd_sweep, "rate": cmd_rate}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve(args)
        # the rate study has its own defaults for rank and gamma unless set explicitly
        explicit = set(io.read_config(args.config)) if args.config else set()
        cfg["_rank_set"] = args.rank is not None or "rank" in explicit
        cfg["_gamma_set"] = args.gamma is not None or "gamma" in explicit
        return COMMANDS[args.command](cfg)
    except (io.ConfigError, ValueError) as exc:
        if isinstance(exc, io.MatrixFormatError):
            print(f"bestpair: I/O error: {exc}", file=sys.stderr)
            return EXIT_IO
        print(f"bestpair: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"bestpair: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (SvdError, RateEstimationError, ArithmeticError) as exc:
        print(f"bestpair: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
