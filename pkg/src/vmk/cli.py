"""Command-line entry point.

Subcommands share one config file: affine-solve and quadratic-solve dump
the Riccati solution and the deterministic strategy profile, frontier
tabulates the mean-variance tradeoff, simulate runs the Monte Carlo
consistency pipeline, sweep re-solves across one parameter, and check
prints admissibility diagnostics without writing files.

All CSV output is written atomically (temp file then rename) after the
full computation succeeds, so a failing run never leaves partial files.
Reruns with the same config and seed are byte identical.
"""

import argparse
import csv
import json
import os
import sys
from types import SimpleNamespace

import numpy as np

from . import config as cfgmod
from .affine import (
    AffineEvaluator,
    g0_nodes,
    gamma0_affine,
    mean_reversion_a_bound,
    solve_riccati_volterra,
    theta_condition_check_affine,
)
from .errors import ConfigError, ModelAssumptionError, RiccatiBlowUpError, VmkError
from .grid import make_grid
from .markowitz import a_of_p, frontier, integrated_rate, value_v, xi_star
from .montecarlo import run_mc
from .quadratic import (
    QuadraticEvaluator,
    asset_positions,
    contraction_report,
    lambda_max_covariance,
    solve_operator_riccati,
    volatility_matrix,
)


def _fmt(value) -> str:
    if isinstance(value, (float, np.floating)):
        return "%.12g" % value
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (list, tuple)):
        return json.dumps(list(value))
    return str(value)


def _write_csv(path: str, header, rows) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])
    os.replace(tmp, path)


def _solve(kind: str, model, grid) -> SimpleNamespace:
    if kind == "affine":
        psi = solve_riccati_volterra(model, grid)
        return SimpleNamespace(kind=kind, psi=psi, solution=None,
                               gamma0=gamma0_affine(model, grid, psi))
    sol = solve_operator_riccati(model, grid)
    return SimpleNamespace(kind=kind, psi=None, solution=sol, gamma0=sol.gamma0)


def _premium_profile(kind: str, model, grid, solved):
    """Deterministic per-asset premium profile on the nodes, (n+1, d)."""
    if kind == "affine":
        rev = grid.n - np.arange(grid.n + 1)
        loadings = model.theta[None, :] + (model.rho * model.nu)[None, :] * solved.psi[rev]
        curve = g0_nodes(model, grid)
        return loadings * np.sqrt(np.maximum(curve, 0.0)), curve
    return solved.solution.premium_profile, solved.solution.g0s


def _positions_profile(kind: str, model, grid, alpha, curve):
    """Asset positions matching the amount profile; NaN where undefined."""
    out = np.full_like(alpha, np.nan)
    if kind == "affine":
        vol = np.sqrt(np.maximum(curve, 0.0))
        np.divide(alpha, vol, out=out, where=vol > 0.0)
        return out
    if model.loadings is None:
        return out
    for k in range(alpha.shape[0]):
        try:
            out[k] = asset_positions(model, curve[k], alpha[k])
        except VmkError:
            pass
    return out


def _strategy_rows(kind: str, model, grid, solved, m_value: float, x0: float):
    int_r = integrated_rate(model.rate, grid)
    xi = xi_star(solved.gamma0, x0, m_value, int_r)
    prem, curve = _premium_profile(kind, model, grid, solved)
    alpha = prem * xi
    pi = _positions_profile(kind, model, grid, alpha, curve)
    d = alpha.shape[1]
    header = ["t"] + [f"alpha_{i + 1}" for i in range(d)] + [f"pi_{i + 1}" for i in range(d)]
    rows = [[grid.nodes[k], *alpha[k], *pi[k]] for k in range(grid.n + 1)]
    return header, rows, alpha


def _require_kind(cfg, kind: str, sub: str) -> None:
    if cfg.model_kind != kind:
        raise ConfigError(f"subcommand '{sub}' needs a '{kind}' model section, "
                          f"config has '{cfg.model_kind}'")


def _cmd_affine_solve(cfg, out_dir: str) -> None:
    _require_kind(cfg, "affine", "affine-solve")
    kind, model = cfgmod.build_model(cfg)
    grid = cfgmod.build_grid(cfg)
    solved = _solve(kind, model, grid)
    d = model.dim
    ric_header = ["t"] + [f"psi_{i + 1}" for i in range(d)]
    ric_rows = [[grid.nodes[k], *solved.psi[k]] for k in range(grid.n + 1)]
    s_header, s_rows, _ = _strategy_rows(kind, model, grid, solved,
                                         cfg.m_values[0], cfgmod.wealth_x0(cfg, model))
    _write_csv(os.path.join(out_dir, "riccati.csv"), ric_header, ric_rows)
    _write_csv(os.path.join(out_dir, "strategy.csv"), s_header, s_rows)


def _cmd_quadratic_solve(cfg, out_dir: str) -> None:
    _require_kind(cfg, "quadratic", "quadratic-solve")
    kind, model = cfgmod.build_model(cfg)
    grid = cfgmod.build_grid(cfg)
    solved = _solve(kind, model, grid)
    sol = solved.solution
    N = model.n_state
    ric_header = ["t", "phi", "phidot"] + [f"p_{i + 1}{j + 1}" for i in range(N) for j in range(N)]
    ric_rows = [[grid.nodes[k], sol.phi[k], sol.phidot[k], *sol.p_path[k].ravel()]
                for k in range(grid.n + 1)]
    s_header, s_rows, _ = _strategy_rows(kind, model, grid, solved,
                                         cfg.m_values[0], cfgmod.wealth_x0(cfg, model))
    _write_csv(os.path.join(out_dir, "riccati.csv"), ric_header, ric_rows)
    _write_csv(os.path.join(out_dir, "strategy.csv"), s_header, s_rows)


def _cmd_frontier(cfg, out_dir: str) -> None:
    kind, model = cfgmod.build_model(cfg)
    grid = cfgmod.build_grid(cfg)
    solved = _solve(kind, model, grid)
    int_r = integrated_rate(model.rate, grid)
    points = frontier(solved.gamma0, cfgmod.wealth_x0(cfg, model), cfg.m_values, int_r)
    rows = [[p.m, p.std, p.variance, p.xi_star, p.gamma0] for p in points]
    _write_csv(os.path.join(out_dir, "frontier.csv"),
               ["m", "std", "variance", "xi_star", "gamma0"], rows)


def _cmd_simulate(cfg, out_dir: str) -> None:
    kind, model = cfgmod.build_model(cfg)
    grid = cfgmod.build_grid(cfg)
    solved = _solve(kind, model, grid)
    x0 = cfgmod.wealth_x0(cfg, model)
    int_r = integrated_rate(model.rate, grid)
    m_value = cfg.m_values[0]
    xi = xi_star(solved.gamma0, x0, m_value, int_r)
    target_v = value_v(solved.gamma0, x0, m_value, int_r)
    if kind == "affine":
        evaluator = AffineEvaluator(model, grid, psi=solved.psi)
    else:
        evaluator = QuadraticEvaluator(model, grid, solution=solved.solution)
    result = run_mc(evaluator, cfg.mc.paths, cfg.mc.seed, x0, xi,
                    antithetic=cfg.mc.antithetic, chunk=cfg.mc.chunk,
                    keep_paths=cfg.mc.dump_paths)
    rows = [
        ["paths", cfg.mc.paths, ""],
        ["seed", cfg.mc.seed, ""],
        ["m", m_value, ""],
        ["xi_star", xi, ""],
        ["mean_XT", result.wealth.mean, result.wealth.se_mean],
        ["target_m", m_value, ""],
        ["var_XT", result.wealth.variance, result.wealth.se_variance],
        ["target_V", target_v, ""],
        ["gamma0_mc", result.gamma.mean, result.gamma.se_mean],
        ["gamma0_closed", solved.gamma0, ""],
    ]
    _write_csv(os.path.join(out_dir, "mc.csv"), ["quantity", "value", "se"], rows)
    if cfg.mc.dump_paths > 0:
        _write_paths_csv(os.path.join(out_dir, "paths.csv"), kind, model, grid, result.kept)


def _write_paths_csv(path: str, kind: str, model, grid, kept) -> None:
    n = grid.n
    d = kept.alpha.shape[2]
    n_state = kept.state.shape[2]
    header = (["path_id", "t", "X"]
              + [f"alpha_{i + 1}" for i in range(d)]
              + [f"pi_{i + 1}" for i in range(d)]
              + [f"Y_{j + 1}" for j in range(n_state)])
    rows = []
    for p in range(kept.x.shape[0]):
        pi = np.full((n + 1, d), np.nan)
        if kind == "affine":
            vol = np.sqrt(np.maximum(kept.state[p, :n], 0.0))
            np.divide(kept.alpha[p], vol, out=pi[:n], where=vol > 0.0)
        elif model.loadings is not None:
            for k in range(n):
                try:
                    sigma = volatility_matrix(model, kept.state[p, k])
                    pi[k] = np.linalg.solve(sigma.T, kept.alpha[p, k])
                except (VmkError, np.linalg.LinAlgError):
                    pass
        for k in range(n + 1):
            alpha_k = kept.alpha[p, k] if k < n else np.full(d, np.nan)
            rows.append([p, grid.nodes[k], kept.x[p, k], *alpha_k, *pi[k], *kept.state[p, k]])
    _write_csv(path, header, rows)


def _cmd_sweep(cfg, out_dir: str) -> None:
    if cfg.sweep is None:
        raise ConfigError("subcommand 'sweep' needs a 'sweep' section in the config")
    param = cfg.sweep.parameter
    rows = []
    for value in cfg.sweep.values:
        sec = dict(cfg.model_sec)
        horizon = cfg.horizon
        if param == "T":
            horizon = float(value)
        else:
            sec[param] = value
        grid = make_grid(horizon, cfg.n)
        model = cfgmod.model_from_section(cfg.model_kind, sec)
        solved = _solve(cfg.model_kind, model, grid)
        _, _, alpha = _strategy_rows(cfg.model_kind, model, grid, solved,
                                     cfg.m_values[0], cfgmod.wealth_x0(cfg, model))
        for j in range(alpha.shape[1]):
            for k in range(grid.n + 1):
                rows.append([param, value, j + 1, grid.nodes[k], alpha[k, j]])
    _write_csv(os.path.join(out_dir, "sweep.csv"),
               ["parameter", "value", "asset", "t", "alpha"], rows)


def _cmd_check(cfg) -> None:
    kind, model = cfgmod.build_model(cfg)
    grid = cfgmod.build_grid(cfg)
    chk = cfg.check
    print(f"model: {kind}")
    print(f"grid: T={_fmt(grid.horizon)} n={grid.n}")
    corr = np.diag(model.rho) if kind == "affine" else model.corr
    a_frob = a_of_p(chk.p, corr, norm="frobenius")
    a_sq = a_of_p(chk.p, corr, norm="squared-frobenius")
    a_used = chk.a if chk.a is not None else a_frob
    print(f"a_of_p(p={_fmt(chk.p)}): frobenius={_fmt(a_frob)} squared-frobenius={_fmt(a_sq)}")
    print(f"a_used: {_fmt(a_used)}")
    solved = _solve(kind, model, grid)
    int_r = integrated_rate(model.rate, grid)
    bound = float(np.exp(2.0 * int_r))
    gamma0 = solved.gamma0
    print(f"gamma0: {_fmt(gamma0)}")
    print(f"gamma0_bound_exp_2intr: {_fmt(bound)}")
    print(f"h1_condition_0_lt_gamma0_lt_bound: {0.0 < gamma0 < bound}")
    x0 = cfgmod.wealth_x0(cfg, model)
    m_value = cfg.m_values[0]
    print(f"xi_star(m={_fmt(m_value)}): {_fmt(xi_star(gamma0, x0, m_value, int_r))}")
    print(f"value_V(m={_fmt(m_value)}): {_fmt(value_v(gamma0, x0, m_value, int_r))}")
    if kind == "affine":
        report = theta_condition_check_affine(model, grid, solved.psi, a_used, chk.p)
        for key in sorted(report):
            print(f"theta_condition.{key}: {_fmt(report[key])}")
        kappas = -np.diag(model.drift)
        for i, (kap, nu) in enumerate(zip(kappas, model.nu)):
            if kap > 0.0 and nu > 0.0:
                print(f"mean_reversion_a_bound[{i + 1}]: {_fmt(mean_reversion_a_bound(kap, nu))}")
        return
    print(f"m0_min_eig: {_fmt(model.m0_min_eig)}")
    print(f"psd_violated: {model.psd_violated}")
    report = contraction_report(model, grid, c=chk.c)
    for key in sorted(report):
        print(f"contraction.{key}: {_fmt(report[key])}")
    coarse = make_grid(grid.horizon, chk.coarse_n)
    cov = lambda_max_covariance(model, coarse, a_used)
    for key in sorted(cov):
        print(f"covariance.{key}: {_fmt(cov[key])}")


_HINTS = (
    (ModelAssumptionError,
     "hint: check the correlation rows (|C_k| <= 1) and the deflated driver "
     "covariance; set enforce_psd: false only if the indefinite case is intended"),
    (RiccatiBlowUpError,
     "hint: the Riccati solution explodes before maturity; shorten grid.T or "
     "reduce theta / eta (see the 'check' subcommand for the contraction bounds)"),
)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="vmk",
        description="Mean-variance strategies under Volterra stochastic volatility",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("affine-solve", "quadratic-solve", "frontier", "simulate", "sweep", "check"):
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True)
        sp.add_argument("--out", default=None)
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--paths", type=int, default=None)
        sp.add_argument("--grid-n", type=int, default=None, dest="grid_n")
    args = parser.parse_args(argv)
    try:
        cfg = cfgmod.load_config(args.config)
        if args.seed is not None:
            cfg.mc.seed = args.seed
        if args.paths is not None:
            cfg.mc.paths = args.paths
        if args.grid_n is not None:
            if args.grid_n < 2:
                raise ConfigError("--grid-n must be at least 2")
            cfg.n = args.grid_n
        if args.out is not None:
            cfg.out_dir = args.out
        if args.command == "check":
            _cmd_check(cfg)
            return 0
        os.makedirs(cfg.out_dir, exist_ok=True)
        if args.command == "affine-solve":
            _cmd_affine_solve(cfg, cfg.out_dir)
        elif args.command == "quadratic-solve":
            _cmd_quadratic_solve(cfg, cfg.out_dir)
        elif args.command == "frontier":
            _cmd_frontier(cfg, cfg.out_dir)
        elif args.command == "simulate":
            _cmd_simulate(cfg, cfg.out_dir)
        elif args.command == "sweep":
            _cmd_sweep(cfg, cfg.out_dir)
        return 0
    except VmkError as exc:
        print(f"error: {exc}", file=sys.stderr)
        for klass, hint in _HINTS:
            if isinstance(exc, klass):
                print(hint, file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
