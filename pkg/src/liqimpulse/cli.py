"""Command line entry point: ``liqimpulse <command> [--config F] [--out D] [--seed N] [--workers N]``.

Commands
    constants  concavity constants and the cost-assumption audit (JSON)
    envelope   subadditive envelope of the cost (CSV + PNG)
    solve      value surfaces V^1..V^k, policy, solve report, figures
    simulate   run the policy on simulated paths: trade log, jump statistics, MC value
    verify     property checks on the solved surfaces and simulated strategies
    cara       reduced exponential-utility solve and factorization check
    all        every stage above, in order

Exit codes: 0 success, 1 a verification check failed, 2 bad configuration or
input, 3 a required upstream artifact is missing or from another config.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import time

import numpy as np

from . import plots
from .cara import CaraProblem, cross_check_factorization, solve_cara
from .checks import (SurfaceCheckContext, all_passed, reports_to_json, run_strategy_checks,
                     run_surface_checks)
from .config import RunConfig, load_config
from .costs import check_assumptions, checkable_constants, concavity_constants, cost, subadditive_envelope
from .errors import ConfigError, DependencyError, LiqImpulseError
from .lattice import interpolate, load, problem_grid, save
from .market import simulate_paths
from .payoff import UtilitySpec
from .solver import SolverConfig, extract_policy, solve_vn
from .strategy import (execute_policy, jump_statistics, mc_value_estimate, self_financing_audit,
                       write_trade_log)

log = logging.getLogger("liqimpulse")

COMMANDS = ("constants", "envelope", "solve", "simulate", "verify", "cara", "all")
ENVELOPE_ROUNDS = 8
ENVELOPE_POINTS = 161


# ---------------------------------------------------------------- shared builders

def run_constants(cfg: RunConfig):
    spec, market, u = cfg.cost_spec(), cfg.market_model(), cfg.utility_spec()
    lam, Lam = u.lam, u.Lam
    norm = cfg.solver["normalization"]
    if norm == "auto":
        return checkable_constants(spec, market, lam, Lam, cfg.g("T"))
    return concavity_constants(spec, market, lam, Lam, cfg.g("T"), norm)


def build_grid(cfg: RunConfig, eps1: float):
    return problem_grid(cfg.market_model(), cfg.cost_spec(), cfg.g("T"), int(cfg.g("n_steps")),
                        cfg.g("x0"), cfg.g("y0"), int(cfg.g("n_x")), int(cfg.g("n_y")), int(cfg.g("n_z")), eps1)


def solver_config(cfg: RunConfig, grid) -> SolverConfig:
    return SolverConfig(grid, n_max=int(cfg.s("n_max")), stop_tol=cfg.s("stop_tol"),
                        tie_break=cfg.tie_break(), exercise_tol=cfg.s("exercise_tol"),
                        n_quad=int(cfg.s("n_quad")), full_depth=cfg.full_depth())


def _prov(cfg: RunConfig) -> dict:
    return {"config_hash": cfg.config_hash, "seed": cfg.seed}


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=float)
        fh.write("\n")


class Manifest:
    """Record of artifacts written in an output directory, with their hashes."""

    def __init__(self, out, cfg):
        self.path = os.path.join(out, "manifest.json")
        self.cfg = cfg
        self.data = {}
        if os.path.exists(self.path):
            with open(self.path) as fh:
                self.data = json.load(fh)
        if self.data.get("config_hash") != cfg.config_hash:
            self.data = {"config_hash": cfg.config_hash, "seed": cfg.seed, "artifacts": {}}

    def add(self, *paths):
        for p in paths:
            with open(p, "rb") as fh:
                digest = hashlib.sha256(fh.read()).hexdigest()
            self.data["artifacts"][os.path.basename(p)] = digest
        _write_json(self.path, self.data)


def _require(path, cfg: RunConfig, what: str):
    if not os.path.exists(path):
        raise DependencyError(f"missing upstream artifact {os.path.basename(path)}; run `{what}` first")
    obj = load(path)
    got = obj.provenance.get("config_hash")
    if got != cfg.config_hash:
        raise DependencyError(f"{os.path.basename(path)} was produced by config {str(got)[:12]}..., "
                              f"current config is {cfg.config_hash[:12]}...")
    return obj


def _surface_files(out):
    names = sorted((f for f in os.listdir(out) if f.startswith("surface_k") and f.endswith(".lqv")),
                   key=lambda f: int(f[len("surface_k"):-4]))
    return [os.path.join(out, f) for f in names]


# ---------------------------------------------------------------- stages

def cmd_constants(cfg, out, man, workers=1):
    k = run_constants(cfg)
    rep = check_assumptions(cfg.cost_spec())
    path = os.path.join(out, "constants.json")
    d = json.loads(k.to_json())
    d.update({"bound_checkable": k.bound_checkable, "assumptions": rep.entries, "provenance": _prov(cfg)})
    _write_json(path, d)
    man.add(path)
    log.info("constants: C0=%.4g C1=%.4g eps1=%.4g (%s)", k.C0, k.C1, k.eps1, k.normalization)
    return 0


def cmd_envelope(cfg, out, man, workers=1):
    spec = cfg.cost_spec()
    z = np.linspace(-2 * spec.M, 2 * spec.M, ENVELOPE_POINTS)
    env = subadditive_envelope(spec, z, ENVELOPE_ROUNDS)
    csv_path, png = os.path.join(out, "envelope.csv"), os.path.join(out, "envelope.png")
    env.to_csv(csv_path)
    plots.envelope(env, cost(spec, z), png)
    man.add(csv_path, png)
    return 0


def cmd_solve(cfg, out, man, workers=1):
    k = run_constants(cfg)
    grid = build_grid(cfg, k.eps1)
    spec, market, u = cfg.cost_spec(), cfg.market_model(), cfg.utility_spec()
    res = solve_vn(solver_config(cfg, grid), market, spec, u)
    pol = extract_policy(res, spec)
    prov = _prov(cfg)
    for old in _surface_files(out):
        os.remove(old)
    written = []
    for s in res.surfaces:
        s.provenance = prov
        p = os.path.join(out, f"surface_k{s.n_jumps}.lqv")
        save(s, p)
        written.append(p)
    pol.provenance = prov
    ppath = os.path.join(out, "policy.lqp")
    save(pol, ppath)
    report = res.report()
    report["provenance"] = prov
    report["exercise_fraction"] = float(pol.exercise[:-1].mean())
    rpath = os.path.join(out, "solve_report.json")
    _write_json(rpath, report)
    _write_json(os.path.join(out, "timings.json"), {"wall_seconds_per_layer": res.layer_seconds})
    csv_path = os.path.join(out, "value_t0.csv")
    res.final.to_csv(csv_path, times=[0.0])
    figs = [os.path.join(out, n) for n in ("value_slices.png", "policy_map.png", "increments.png")]
    plots.value_slices(res.final, cfg.g("x0"), figs[0])
    plots.policy_map(pol, cfg.g("x0"), figs[1])
    plots.increments(res.increments, figs[2])
    man.add(*written, ppath, rpath, csv_path, *figs)
    log.info("solve: k=%d increments %s", len(res.surfaces), ", ".join(f"{v:.3g}" for v in res.increments))
    return 0


def _simulate(cfg, out, workers):
    pol = _require(os.path.join(out, "policy.lqp"), cfg, "solve")
    market, spec = cfg.market_model(), cfg.cost_spec()
    paths = simulate_paths(market, float(pol.grid.t[0]), cfg.g("x0"), pol.grid.t, cfg.n_paths, cfg.seed, workers)
    init = (cfg.g("y0"), float(cfg.simulation["z0"]))
    strategies = execute_policy(pol, paths, init, spec)
    return pol, paths, strategies, init


def cmd_simulate(cfg, out, man, workers=1):
    k = run_constants(cfg)
    pol, paths, strategies, init = _simulate(cfg, out, workers)
    surfaces = _surface_files(out)
    final = _require(surfaces[-1], cfg, "solve") if surfaces else None
    stats = jump_statistics(strategies, k.eps1)
    u = cfg.utility_spec()
    log_path = os.path.join(out, "trade_log.csv")
    write_trade_log(strategies, log_path)
    spath = os.path.join(out, "jump_stats.json")
    sd = json.loads(stats.to_json())
    sd["provenance"] = _prov(cfg)
    _write_json(spath, sd)
    mean, half = mc_value_estimate(strategies, u)
    audit = self_financing_audit(strategies, paths, cfg.cost_spec())
    mc = {"mc_mean": mean, "ci_half_width": half, "initial_state": {"x": cfg.g("x0"), "y": init[0], "z": init[1]},
          "self_financing_max_error": audit.max_error, "provenance": _prov(cfg)}
    if final is not None:
        mc["grid_value"] = interpolate(final, 0.0, cfg.g("x0"), init[0], init[1])
    mpath = os.path.join(out, "mc_value.json")
    _write_json(mpath, mc)
    png = os.path.join(out, "jump_histogram.png")
    plots.jump_histogram([s.n_jumps for s in strategies], stats.small_jump_counts, png)
    man.add(log_path, spath, mpath, png)
    log.info("simulate: mean N=%.3f, MC value %.5f +/- %.5f", stats.mean_n, mean, half)
    return 0


def cmd_verify(cfg, out, man, workers=1):
    files = _surface_files(out)
    if not files:
        raise DependencyError("no surfaces found; run `solve` first")
    surfaces = [_require(f, cfg, "solve") for f in files]
    k = run_constants(cfg)
    market, u = cfg.market_model(), cfg.utility_spec()
    ctx = SurfaceCheckContext(u, cfg.cost_spec(), market.b_sup, market.s_sup, cfg.g("T"))
    reports = run_surface_checks(surfaces, ctx)
    _, _, strategies, _ = _simulate(cfg, out, workers)
    stats = jump_statistics(strategies, k.eps1)
    reports += run_strategy_checks(stats, strategies, k)
    path = os.path.join(out, "checks.json")
    with open(path, "w") as fh:
        fh.write(reports_to_json(reports))
        fh.write("\n")
    man.add(path)
    for r in sorted(reports, key=lambda r: r.check_name):
        log.info("check %-32s %s", r.check_name, "skip" if r.skipped else ("pass" if r.passed else "FAIL"))
    return 0 if all_passed(reports) else 1


def cmd_cara(cfg, out, man, workers=1):
    market, spec = cfg.market_model(), cfg.cost_spec()
    if not market.is_constant:
        raise ConfigError("market: the cara command needs constant drift and volatility")
    if spec.kind != "power":
        raise ConfigError("cost.kind: the cara command needs a power cost")
    if spec.alpha >= 1:
        raise ConfigError("cost.alpha: the cara command needs alpha in (0, 1)")
    k = run_constants(cfg)
    grid = build_grid(cfg, k.eps1)
    u = UtilitySpec("cara", risk_aversion=1.0)
    res = solve_vn(solver_config(cfg, grid), market, spec, u)
    b0, s0 = float(market.drift_params[0]), float(market.vol_params[0])
    red = solve_cara(CaraProblem(b0, s0, spec.alpha, spec.c0, tuple(grid.t), tuple(grid.z), spec.M))
    err = cross_check_factorization(res.final, red, cfg.g("x0"), cfg.g("y0"))
    csv_path = os.path.join(out, "cara_surface.csv")
    red.to_csv(csv_path)
    rpath = os.path.join(out, "cara_report.json")
    _write_json(rpath, {"factorization_error": err, "k": len(res.surfaces),
                        "reference": {"x": cfg.g("x0"), "y": cfg.g("y0")}, "provenance": _prov(cfg)})
    png = os.path.join(out, "cara_surface.png")
    plots.cara_surface(red, png)
    man.add(csv_path, rpath, png)
    log.info("cara: factorization error %.3g", err)
    return 0


STAGES = {"constants": cmd_constants, "envelope": cmd_envelope, "solve": cmd_solve,
          "simulate": cmd_simulate, "verify": cmd_verify, "cara": cmd_cara}


def run(command: str, cfg: RunConfig, workers: int = 1) -> int:
    if command not in COMMANDS:
        raise ConfigError(f"unknown command {command!r}; choose from {COMMANDS}")
    cfg.validate()
    out = cfg.out_dir
    os.makedirs(out, exist_ok=True)
    man = Manifest(out, cfg)
    order = ("constants", "envelope", "solve", "simulate", "verify", "cara") if command == "all" else (command,)
    code = 0
    for name in order:
        t0 = time.perf_counter()
        rc = STAGES[name](cfg, out, man, workers)
        log.info("%s finished in %.1fs", name, time.perf_counter() - t0)
        code = max(code, rc)
    return code


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="liqimpulse", description=__doc__.split("\n\n")[0])
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", help="INI run configuration (defaults to the built-in desk-scale run)")
    ap.add_argument("--out", help="output directory (overrides [output] dir)")
    ap.add_argument("--seed", type=int, help="simulation seed (overrides [simulation] seed)")
    ap.add_argument("--workers", type=int, default=1, help="worker threads for path simulation")
    ap.add_argument("-q", "--quiet", action="store_true")
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = cfg.with_seed(args.seed)
        if args.out:
            cfg = cfg.with_out(args.out)
        if args.workers < 1:
            raise ConfigError("--workers must be >= 1")
        return run(args.command, cfg, args.workers)
    except DependencyError as exc:
        log.error("%s", exc)
        return 3
    except (ConfigError, LiqImpulseError) as exc:
        log.error("%s", exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
