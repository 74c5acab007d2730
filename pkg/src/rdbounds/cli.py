"""Command-line entry point: ``rdbounds COMMAND [--config PATH] [--out DIR] ...``.

Exit status: 0 when the command's check passes, 1 when it fails, 2 on a
configuration or runtime error.
"""
from __future__ import annotations

import argparse
import datetime as _dt
import logging
import os
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from . import io as rio
from .config import ConfigError, ExperimentConfig, config_from_dict, load_config
from .geometry import SpaceTimeGrid

log = logging.getLogger("rdbounds")


@dataclass
class Outcome:
    passed: bool
    summary: dict
    rows: list = field(default_factory=list)
    fields: list = field(default_factory=list)    # (name, values, grid, sidecar)


# ---------------------------------------------------------------------------
# command pipelines


def cmd_ode_bound(cfg: ExperimentConfig, threads: int) -> Outcome:
    from .experiments import ode_noise_ratios
    from .nonlinearity import Nonlinearity
    from .solver import solve_ode

    if cfg.kind != "polynomial":
        raise ConfigError("ode-bound needs a polynomial nonlinearity")
    nl = Nonlinearity.polynomial(cfg.m)
    m = cfg.m
    rows, ok = [], True
    x0 = np.asarray(cfg.x0, dtype=float)
    traj = solve_ode(nl, x0, None, cfg.n_steps)
    t = traj.times
    for k, v in enumerate(x0):
        exact = (v ** (1 - m) + (m - 1) * t) ** (-1 / (m - 1))
        err = float(np.max(np.abs(traj.values[k] - exact) / exact))
        late = t >= 1e-3
        env = float(np.max(np.abs(traj.values[k][late]) / (((m - 1) * t[late]) ** (-1 / (m - 1)))))
        passed = err <= 1e-4 and env <= 1.01
        ok &= passed
        rows.append({"part": "deterministic", "x0": float(v), "max_rel_error": err, "envelope_ratio": env,
                     "passed": passed})
    ratios = ode_noise_ratios([1.0, 1e3], cfg.n_paths, 1000, cfg.alpha, cfg.base_seed, m)
    p99 = {k: float(np.percentile(v, 99)) for k, v in ratios.items()}
    spread = max(p99.values()) / min(p99.values()) - 1
    ok &= spread <= 0.1
    for k, v in p99.items():
        rows.append({"part": "stochastic", "x0": k, "p99_ratio": v, "passed": spread <= 0.1})
    return Outcome(bool(ok), {"p99_ratio": {f"{k:g}": v for k, v in p99.items()}, "p99_spread": spread}, rows)


def cmd_coming_down(cfg: ExperimentConfig, threads: int) -> Outcome:
    from .experiments import run_coming_down

    res = run_coming_down(cfg, keep_fields=cfg.write_fields, workers=threads)
    fields = []
    grid = cfg.grid()
    for seed, f in res.fields.items():
        fields.append((f"zeta_seed{seed}", f["zeta"], grid, {"seed": seed, "spec": cfg.noise_spec().to_dict()}))
        for b, M in enumerate(cfg.M):
            fields.append((f"u_seed{seed}_M{M:g}", f["u"][b], grid, {"seed": seed, "M": M}))
    return Outcome(res.summary["uniform"], res.summary, [r.row() for r in res.reports], fields)


def cmd_barrier_check(cfg: ExperimentConfig, threads: int) -> Outcome:
    from .nonlinearity import verify_barrier_inequality

    rep = verify_barrier_inequality(cfg.nonlinearity(), cfg.lam, cfg.grid())
    summary = rep.to_dict()
    return Outcome(rep.passed, summary, [{k: v for k, v in summary.items() if not isinstance(v, (dict, list))}])


def cmd_noise_norm(cfg: ExperimentConfig, threads: int) -> Outcome:
    from .experiments import dyadic_dense_study, variance_scaling_study
    from .noise import sample_noise

    spec = cfg.noise_spec()
    grid = cfg.grid()
    rep = variance_scaling_study(spec, grid.nx, max(cfg.ensemble, 200), cfg.base_seed, alpha=cfg.alpha)
    dd = dyadic_dense_study(spec, grid.nx, min(cfg.ensemble, 100), cfg.alpha, cfg.base_seed)
    worst = max(r["ratio"] for r in dd)
    summary = {"scaling": rep.to_dict(), "exact_slope": rep.extra["exact_slope"],
               "dyadic_dense_max_ratio": worst}
    fields = []
    if cfg.write_fields:
        real = sample_noise(grid, spec, cfg.base_seed)
        fields.append((f"zeta_seed{cfg.base_seed}", real.values, grid, real.sidecar()))
    return Outcome(rep.passed and worst <= 4, summary, dd, fields)


def cmd_schauder(cfg: ExperimentConfig, threads: int) -> Outcome:
    from .experiments import schauder_study

    alpha = cfg.alpha if cfg.alpha is not None else 0.5
    rows = schauder_study(cfg.radii, cfg.dx_list, alpha)
    r = [row["ratio"] for row in rows]
    spread = max(r) / min(r)
    return Outcome(spread <= 2, {"max_over_min": spread, "ratios": r}, rows)


def cmd_commutator(cfg: ExperimentConfig, threads: int) -> Outcome:
    from .experiments import commutator_study

    rows = commutator_study(cfg.T, cfg.n_fields, cfg.alpha, cfg.m, cfg.base_seed, cfg.tolerance)
    fails = sum(not r["passed"] for r in rows)
    return Outcome(fails == 0, {"n_checks": len(rows), "failures": fails,
                                "max_ratio": max(r["ratio"] for r in rows)}, rows)


def cmd_tails(cfg: ExperimentConfig, threads: int) -> Outcome:
    from .experiments import compare_integrability, estimate_tail_exponent, sample_invariant_measure, \
        spde_sup_samples

    if cfg.samples_file:
        x = rio.read_samples(cfg.samples_file)
        fit = estimate_tail_exponent(x, cfg.quantile, cfg.tail_method)
        return Outcome(True, {"beta": fit.beta, "fit": fit.to_dict()}, [fit.to_dict()])
    nx = cfg.nx if cfg.nx is not None else 65
    sde = spde_sup_samples(cfg.nonlinearity(), cfg.noise_spec(), nx, cfg.n_samples, cfg.batch, cfg.base_seed)
    steps = max(cfg.chain_steps, 10_000)
    thin = max(1, steps * cfg.n_chains // cfg.n_samples)
    inv = sample_invariant_measure(cfg.m, nx, steps, cfg.base_seed, cfg.n_chains, cfg.burn_in, thin, cfg.scaling)
    inv_sup = np.abs(inv.fields).max(axis=1)
    f_sde = estimate_tail_exponent(sde["sup_region"], cfg.quantile, cfg.tail_method)
    f_inv = estimate_tail_exponent(inv_sup, cfg.quantile, cfg.tail_method)
    f_fin = estimate_tail_exponent(sde["sup_final"], cfg.quantile, cfg.tail_method)
    comp = compare_integrability(cfg.m, cfg.alpha, f_sde, f_inv, tuple(cfg.band), cfg.max_gap)
    summary = {"comparison": comp, "sde": f_sde.to_dict(), "sde_final_slice": f_fin.to_dict(),
               "invariant": f_inv.to_dict(), "invariant_diagnostics": inv.diagnostics()}
    rows = [{"source": "sde", **f_sde.to_dict()}, {"source": "sde_final_slice", **f_fin.to_dict()},
            {"source": "invariant", **f_inv.to_dict()}]
    for r in rows:
        r["fit_range"] = f"{r['fit_range'][0]!r}:{r['fit_range'][1]!r}"
    return Outcome(comp["passed"], summary, rows)


def cmd_invariant(cfg: ExperimentConfig, threads: int) -> Outcome:
    from .experiments import sample_invariant_measure

    nx = cfg.nx if cfg.nx is not None else 65
    inv = sample_invariant_measure(cfg.m, nx, cfg.chain_steps, cfg.base_seed, cfg.n_chains, cfg.burn_in,
                                   scaling=cfg.scaling)
    f = inv.fields
    mean = f.mean(axis=0)
    se = f.std(axis=0) / np.sqrt(max(len(f) / inv.iact, 1.0))
    inner = slice(1, -1)
    symmetric = bool(np.all(np.abs(mean[inner]) <= 4 * se[inner]))
    p = cfg.m + 1
    dx = inv.x[1] - inv.x[0]
    moment = float(np.mean(np.sum(np.abs(f) ** p, axis=1) * dx))
    summary = {"diagnostics": inv.diagnostics(), "mean_field_max_z": float(np.max(np.abs(mean[inner]) / se[inner])),
               "symmetric": symmetric, "moment_m_plus_1": moment, "n_samples": int(len(f))}
    rows = [{"x": float(x), "mean": float(a), "var": float(b)} for x, a, b in zip(inv.x, mean, f.var(axis=0))]
    return Outcome(symmetric, summary, rows)


def cmd_interp(cfg: ExperimentConfig, threads: int) -> Outcome:
    from .experiments import interpolation_study

    nx = cfg.nx if cfg.nx is not None else 257
    alpha = min(cfg.alpha, 0.49)
    rows = interpolation_study(cfg.n_fields if cfg.n_fields != 100 else 1000, nx, alpha, cfg.m, cfg.base_seed)
    fails = sum(not r["passed"] for r in rows)
    return Outcome(fails == 0, {"n_fields": len(rows), "failures": fails,
                                "max_ratio": max(r["ratio"] for r in rows)}, rows)


COMMANDS = {
    "ode-bound": cmd_ode_bound,
    "coming-down": cmd_coming_down,
    "barrier-check": cmd_barrier_check,
    "noise-norm": cmd_noise_norm,
    "schauder": cmd_schauder,
    "commutator": cmd_commutator,
    "tails": cmd_tails,
    "invariant": cmd_invariant,
    "interp": cmd_interp,
}


# ---------------------------------------------------------------------------
# driver


def dispatch(command: str, cfg: ExperimentConfig, out_dir, threads: int = 1) -> tuple[int, dict]:
    """Run one command and write its outputs; returns (exit status, manifest)."""
    if command not in COMMANDS:
        raise ConfigError(f"unknown command {command!r}; choose from {', '.join(COMMANDS)}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    started = _dt.datetime.now(_dt.timezone.utc).isoformat()
    outcome = COMMANDS[command](cfg, threads)
    written = []
    summary = {"command": command, "passed": outcome.passed, "config": cfg.to_dict(), "result": outcome.summary}
    written.append(rio.write_json(out / "summary.json", summary))
    written.append(rio.write_csv(out / "reports.csv", outcome.rows))
    if outcome.fields:
        (out / "fields").mkdir(exist_ok=True)
        for name, values, grid, side in outcome.fields:
            written += rio.write_field(out / "fields" / f"{name}.bin", values, grid, side)
    manifest = {
        "command": command,
        "config_hash": cfg.digest(),
        "version": __version__,
        "started": started,
        "finished": _dt.datetime.now(_dt.timezone.utc).isoformat(),
        "outputs": sorted(str(p.relative_to(out)) for p in written) + ["manifest.json"],
        "passed": outcome.passed,
    }
    rio.write_json(out / "manifest.json", manifest)
    return (0 if outcome.passed else 1), manifest


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rdbounds", description="Coming-down bound verification laboratory.")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", help="YAML or JSON config file (flat keys)")
    p.add_argument("--out", default="rdbounds-out", help="output directory")
    p.add_argument("--threads", type=int, default=os.cpu_count() or 1, help="worker processes")
    p.add_argument("--seed", type=int, help="base seed, overrides the config")
    p.add_argument("--quiet", action="store_true", help="only print errors")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.ERROR if args.quiet else logging.INFO, format="%(message)s")
    try:
        cfg = load_config(args.config) if args.config else config_from_dict({})
        if args.seed is not None:
            if args.seed < 0 or args.seed >= 2**64:
                raise ConfigError("--seed must be an unsigned 64-bit integer")
            cfg = replace(cfg, base_seed=args.seed)
        if args.threads < 1:
            raise ConfigError("--threads must be at least 1")
        status, manifest = dispatch(args.command, cfg, args.out, args.threads)
    except ConfigError as exc:
        for prob in exc.problems:
            log.error("config error: %s", prob)
        return 2
    except Exception as exc:  # runtime failures map to exit 2 with context
        log.error("%s failed: %s: %s", args.command, type(exc).__name__, exc)
        return 2
    log.info("%s: %s (outputs in %s)", args.command, "PASS" if status == 0 else "FAIL", args.out)
    return status


if __name__ == "__main__":
    sys.exit(main())
