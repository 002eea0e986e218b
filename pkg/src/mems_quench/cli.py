"""Command-line front end.

Exit status: 0 on success, 1 for invalid configuration or arguments, 2 for
runtime or numerical failures. Every CSV starts with ``# config:`` and
``# seed:`` comment lines holding the resolved configuration.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import json
import os
import sys
from typing import Sequence

import numpy as np

from .config import ConfigError, RunConfig, load_config, parse_override

__all__ = ["main", "build_parser"]

COMMANDS = ("simulate", "ensemble", "sweep", "eigen", "bounds", "dufresne-check",
            "ordering-check")

# flag -> dotted config key
_FLAG_KEYS = {
    "lam": "model.lam",
    "kappa": "model.kappa",
    "gamma": "model.gamma",
    "bc": "model.bc",
    "beta": "model.beta",
    "beta_c": "model.beta_c",
    "M": "discretization.M",
    "N": "discretization.N",
    "m": "discretization.m",
    "T": "discretization.T",
    "N_R": "ensemble.N_R",
    "seed": "ensemble.master_seed",
    "workers": "ensemble.workers",
    "out": "output.path",
    "figure": "output.figure",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mems-quench",
                                     description="Stochastic MEMS quenching experiments.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="TOML run configuration")
        p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                       help="override one configuration value (repeatable)")
        p.add_argument("--print-config", action="store_true",
                       help="print the resolved configuration as TOML and exit")
        p.add_argument("--lam", type=float)
        p.add_argument("--kappa", type=float)
        p.add_argument("--gamma", type=float)
        p.add_argument("--bc", choices=("dirichlet", "robin"))
        p.add_argument("--beta", type=float)
        p.add_argument("--beta-c", dest="beta_c", type=float)
        p.add_argument("--M", type=int)
        p.add_argument("--N", type=int)
        p.add_argument("--m", type=int)
        p.add_argument("--T", type=float)
        p.add_argument("--N-R", dest="N_R", type=int)
        p.add_argument("--seed", type=int, help="master seed")
        p.add_argument("--workers", type=int)
        p.add_argument("--out", help="CSV output path (stdout when omitted)")
        p.add_argument("--figure", help="also render a figure to this path")
    return parser


def resolve_config(args) -> RunConfig:
    cfg = load_config(args.config)
    overrides = dict(parse_override(s) for s in args.set)
    for flag, key in _FLAG_KEYS.items():
        value = getattr(args, flag)
        if value is not None:
            overrides[key] = value
    if overrides:
        cfg = cfg.with_overrides(overrides)
    cfg.validate()
    for target in (cfg.output.path, cfg.output.figure):
        if target:
            folder = os.path.dirname(os.path.abspath(target))
            if not os.path.isdir(folder) or not os.access(folder, os.W_OK):
                raise ConfigError(f"cannot write to {target}")
    return cfg


@contextlib.contextmanager
def _sink(path):
    if path:
        with open(path, "w", newline="") as fh:
            yield fh
    else:
        yield sys.stdout


def _header(cfg: RunConfig, extra: Sequence[str] = ()) -> list:
    lines = [f"config: {cfg.to_json()}", f"seed: {cfg.ensemble.master_seed}"]
    return lines + list(extra)


def _write_header(fh, lines):
    for line in lines:
        fh.write(f"# {line}\n")


def _num(v) -> str:
    if v is None:
        return ""
    return repr(float(v))


def cmd_simulate(cfg: RunConfig) -> int:
    from .fem import simulate_path
    from .noise import derive_seed

    d = cfg.discretization
    spec, grid = cfg.model.spec(), d.grid()
    seed = derive_seed(cfg.ensemble.master_seed, 0)
    every = cfg.output.snapshot_every or max(1, d.N // 10)
    r = simulate_path(spec, grid, d.N, d.m, d.T, seed, snapshot_every=every,
                      refine_above=d.refine_above)
    result = dict(seed=seed, quenched=r.quenched, T_q=r.T_q, max_u=r.final_max,
                  nonfinite=r.nonfinite)
    with _sink(cfg.output.path) as fh:
        _write_header(fh, _header(cfg, [f"result: {json.dumps(result)}"]))
        w = csv.writer(fh)
        w.writerow(["t", "x", "u"])
        for t, u in r.snapshots:
            for x, val in zip(grid.nodes, u):
                w.writerow([repr(float(t)), repr(float(x)), repr(float(val))])
    if cfg.output.figure:
        from .plotting import plot_path

        plot_path(r, grid, cfg.output.figure, threshold=spec.threshold)
    return 0


def _write_summaries(cfg, summaries, column="lambda", key=lambda s: s.lam):
    nonfinite = sum(s.nonfinite_count for s in summaries)
    with _sink(cfg.output.path) as fh:
        _write_header(fh, _header(cfg, [f"nonfinite_paths: {nonfinite}"]))
        w = csv.writer(fh)
        w.writerow([column, "N_R", "quench_count", "mean_Tq", "var_Tq", "seed"])
        for s in summaries:
            w.writerow([repr(float(key(s))), s.N_R, s.quench_count, _num(s.mean_Tq),
                        _num(s.var_Tq), s.master_seed])


def cmd_ensemble(cfg: RunConfig) -> int:
    from .ensemble import run_ensemble

    d, e = cfg.discretization, cfg.ensemble
    s = run_ensemble(cfg.model.spec(), d.grid(), d.N, d.m, d.T, e.N_R, e.master_seed,
                     workers=e.workers, refine_above=d.refine_above)
    _write_summaries(cfg, [s])
    return 0


def cmd_sweep(cfg: RunConfig) -> int:
    from .ensemble import delta_sensitivity, sweep_lambda

    d, e = cfg.discretization, cfg.ensemble
    kw = dict(workers=e.workers, refine_above=d.refine_above)
    if cfg.sweep.deltas:
        out = delta_sensitivity(cfg.model.spec(), cfg.sweep.deltas, d.grid(), d.N, d.m, d.T,
                                e.N_R, e.master_seed, **kw)
        _write_summaries(cfg, out, "delta", lambda s: s.spec.quench_delta)
    else:
        if not cfg.sweep.lams:
            raise ConfigError("sweep.lams is empty")
        out = sweep_lambda(cfg.model.spec(), cfg.sweep.lams, d.grid(), d.N, d.m, d.T,
                           e.N_R, e.master_seed, **kw)
        _write_summaries(cfg, out)
    if cfg.output.figure:
        from .plotting import plot_table

        plot_table(out, cfg.output.figure)
    return 0


def cmd_eigen(cfg: RunConfig) -> int:
    from .bounds import principal_eigenpair

    eig = principal_eigenpair(cfg.model.boundary())
    with _sink(cfg.output.path) as fh:
        _write_header(fh, _header(cfg))
        w = csv.writer(fh)
        w.writerow(["bc", "beta", "lam1", "normalization_residual"])
        beta = "" if eig.bc.is_dirichlet else repr(eig.bc.beta)
        w.writerow([eig.bc.kind, beta, repr(eig.lam1), repr(eig.normalization_residual)])
    return 0


def cmd_bounds(cfg: RunConfig) -> int:
    from .bounds import principal_eigenpair, prob_no_quench_gamma, v0_inner

    b, mdl = cfg.bounds, cfg.model
    if b.param not in ("gamma", "kappa", "lambda"):
        raise ConfigError(f"bounds.param must be gamma, kappa or lambda, got {b.param!r}")
    eig = principal_eigenpair(mdl.boundary())
    lam1 = eig.lam1 if b.lam1 is None else b.lam1
    v0 = v0_inner(lambda x: 1.0 - b.a * x * (1.0 - x), eig)
    values = b.grid_values()
    results = []
    for v in values:
        lam, kappa, gamma = mdl.lam, mdl.kappa, mdl.gamma
        if b.param == "gamma":
            gamma = v
        elif b.param == "kappa":
            kappa = v
        else:
            lam = v
        results.append(prob_no_quench_gamma(lam, kappa, gamma, lam1, v0))
    with _sink(cfg.output.path) as fh:
        _write_header(fh, _header(cfg, [f"lam1: {lam1!r}", f"v0: {v0!r}"]))
        w = csv.writer(fh)
        w.writerow(["param", "value", "p_no_quench", "p_quench_lb"])
        for v, r in zip(values, results):
            w.writerow([b.param, repr(float(v)), repr(r.value), repr(r.complement().value)])
    if cfg.output.figure:
        from .plotting import plot_curve

        plot_curve(b.param, values, results, cfg.output.figure)
    return 0


def cmd_dufresne(cfg: RunConfig) -> int:
    from .bounds import dufresne_mc_check

    du = cfg.dufresne
    reports = [dufresne_mc_check(float(mu), du.n_paths, du.horizon, du.dt,
                                 cfg.ensemble.master_seed + k)
               for k, mu in enumerate(du.mus)]
    with _sink(cfg.output.path) as fh:
        _write_header(fh, _header(cfg))
        w = csv.writer(fh)
        w.writerow(["mu", "n_paths", "horizon", "dt", "ks_statistic", "p_value", "seed"])
        for r in reports:
            w.writerow([repr(r.mu), r.n_paths, repr(r.horizon), repr(r.dt),
                        repr(r.ks_statistic), repr(r.p_value), r.seed])
    return 0


def cmd_ordering(cfg: RunConfig) -> int:
    from .bounds import pathwise_ordering_check
    from .noise import derive_seed

    d = cfg.discretization
    spec, grid = cfg.model.spec(), d.grid()
    rows = []
    for i in range(cfg.ordering.n_seeds):
        seed = derive_seed(cfg.ensemble.master_seed, i)
        r = pathwise_ordering_check(spec, grid, d.N, d.T, seed, tol=cfg.ordering.tol)
        rows.append((seed, r))
    held = sum(r.holds for _, r in rows)
    with _sink(cfg.output.path) as fh:
        _write_header(fh, _header(cfg, [f"ordering_held: {held}/{len(rows)}"]))
        w = csv.writer(fh)
        w.writerow(["seed", "holds", "max_violation", "tol", "T_q", "tau_bound"])
        for seed, r in rows:
            w.writerow([seed, int(r.holds), repr(r.max_violation), repr(r.tol), _num(r.T_q),
                        _num(r.tau_bound)])
    return 0


_DISPATCH = {
    "simulate": cmd_simulate,
    "ensemble": cmd_ensemble,
    "sweep": cmd_sweep,
    "eigen": cmd_eigen,
    "bounds": cmd_bounds,
    "dufresne-check": cmd_dufresne,
    "ordering-check": cmd_ordering,
}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    try:
        cfg = resolve_config(args)
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    if args.print_config:
        sys.stdout.write(cfg.to_toml())
        return 0
    try:
        return _DISPATCH[args.command](cfg)
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ArithmeticError, np.linalg.LinAlgError, RuntimeError, OSError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2


def run() -> None:
    sys.exit(main())


if __name__ == "__main__":
    run()
