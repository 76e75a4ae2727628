"""``chaoslab`` command line: solve-pde, simulate, couple, lln, sweep, verify-kernel."""

from __future__ import annotations

import argparse
import datetime as _dt
import hashlib
import json
import logging
import os
import sys

import numpy as np

from . import analysis, coupling, experiments, kernels, pde
from .config import Config, OutputDir, dump_config, parse_config
from .errors import ChaoslabError, ConfigError, IoError, NumericalFailure
from .stochastics import SeedSpec, brownian_increments, sample_initial

log = logging.getLogger("chaoslab")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_IO = 0, 2, 3, 4


def _threads(args) -> int:
    if args.threads is not None:
        n = args.threads
    else:
        env = os.environ.get("CHAOSLAB_THREADS")
        try:
            n = int(env) if env else 1
        except ValueError:
            raise ConfigError(f"CHAOSLAB_THREADS must be an integer, got {env!r}", "threads") from None
    if n < 1:
        raise ConfigError(f"threads must be >= 1, got {n}", "threads")
    return n


def _overrides(args) -> dict:
    out = {}
    for item in args.set or []:
        key, sep, val = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects key=value, got {item!r}", key)
        try:
            out[key] = json.loads(val)
        except json.JSONDecodeError:
            out[key] = val
    if args.seed is not None:
        out["master_seed"] = args.seed
    return out


def _regularized(cfg: Config) -> kernels.RegularizedKernel:
    return kernels.RegularizedKernel(cfg.kernel, cfg.cutoff)


# ---------------------------------------------------------------------------
# subcommands


def cmd_solve_pde(cfg: Config, out: OutputDir, args):
    out.check(["snapshots.csv", "diagnostics.json", "manifest.json"])
    sol = pde.solve(cfg.rho0, _regularized(cfg), cfg.sigma, cfg.T, cfg.grid, cfg.pde_dt, cfg.save_every)
    x = sol.grid.centers
    rows = ((t, xi, r) for t, rho in zip(sol.times, sol.densities) for xi, r in zip(x, rho))
    out.csv("snapshots.csv", ("t", "x", "rho"), rows, cfg.master_seed)
    out.json("diagnostics.json", {"eps": sol.rk.eps, "dt": sol.dt, "snapshots": pde.diagnostics(sol)})


def cmd_simulate(cfg: Config, out: OutputDir, args):
    out.check(["trajectories.csv", "manifest.json"])
    rk = _regularized(cfg)
    n_steps = int(np.ceil(cfg.T / cfg.dt - 1e-9)) if cfg.T > 0 else 0
    dt = cfg.T / n_steps if n_steps else cfg.dt
    seed = SeedSpec(cfg.master_seed)
    X0 = sample_initial(cfg.rho0, cfg.N, seed)
    dB = brownian_increments(seed, cfg.N, n_steps, dt) if n_steps else np.empty((cfg.N, 0))
    forces = None
    if cfg.unsafe_raw_kernel:
        log.warning("unsafe_raw_kernel: using the unregularized kernel; results are outside the analyzed regime")
        forces = lambda x: kernels.interaction_forces_reference(rk, x, kernel=cfg.kernel)  # noqa: E731
    path = coupling.simulate_particles(rk, X0, cfg.sigma, dt, dB, forces)
    rows = ((n * dt, p, path[n, p]) for n in range(path.shape[0]) for p in range(path.shape[1]))
    out.csv("trajectories.csv", ("t", "particle_id", "x"), rows, cfg.master_seed)


def cmd_couple(cfg: Config, out: OutputDir, args):
    out.check(["coupling.csv", "summary.json", "manifest.json"])
    setup = coupling.prepare(cfg.coupled())
    rows, summary = [], []
    for r in range(cfg.reps):
        rec = coupling.run_replicate(setup, SeedSpec(cfg.master_seed, r))
        exceeded = np.maximum.accumulate(rec.sup_dev) >= rec.threshold
        rows += [(r, t, d, j, e) for t, d, j, e in zip(rec.times, rec.sup_dev, rec.J, exceeded)]
        summary.append({"replicate_id": r, "max_sup_dev": rec.max_sup_dev, "out_of_domain": rec.out_of_domain})
    out.csv("coupling.csv", ("replicate_id", "t", "sup_dev", "J", "exceeded"), rows, cfg.master_seed)
    out.json(
        "summary.json",
        {"eps": setup.rk.eps, "lambda": setup.lam, "lip_const": setup.rk.lip_const,
         "threshold": cfg.N ** (-cfg.alpha), "replicates": summary},
    )


def cmd_lln(cfg: Config, out: OutputDir, args):
    out.check(["lln.csv", "rates.json", "manifest.json"])
    h = analysis.StepFunction.from_kernel(cfg.kernel)
    cond = analysis.ConditionalMean.build(h, cfg.rho0)
    rows = []
    for N in cfg.N_list:
        res = analysis.lln_exceedance(h, cfg.rho0, N, cfg.alpha, cfg.lln_delta, cfg.reps, cfg.master_seed, cond)
        rows.append((N, cfg.reps, res.exceedance_fraction, res.median_dev))
        log.info("lln N=%d: exceedance %.4f, median %.4g", N, res.exceedance_fraction, res.median_dev)
    out.csv("lln.csv", ("N", "reps", "exceedance_fraction", "median_dev"), rows, cfg.master_seed)
    rates = {}
    for name, col, censor in (("exceedance_fraction", 2, True), ("median_dev", 3, False)):
        try:
            rates[name] = analysis.fit_rate([(r[0], r[col]) for r in rows], censor_zeros=censor).to_dict()
        except NumericalFailure as exc:
            rates[name] = {"error": str(exc), "censored_N": [r[0] for r in rows if r[col] == 0]}
    out.json("rates.json", {"delta": cfg.lln_delta, "alpha": cfg.alpha, **rates})


def cmd_sweep(cfg: Config, out: OutputDir, args):
    out.check(["sweep_result.csv", "rates.json", "timings.json", "manifest.json"])
    fingerprint = hashlib.sha256(dump_config(cfg).encode()).hexdigest()
    res = experiments.run_sweep(cfg.sweep(), _threads(args), out.path / "partial", fingerprint)
    rows = [[r[k] for k in experiments.ROW_FIELDS] for r in res.rows]
    out.csv("sweep_result.csv", experiments.ROW_FIELDS, rows, cfg.master_seed)
    out.json("rates.json", res.rates)
    out.json("timings.json", {"wall_time_s": res.timings, "lambda": {str(s.row["N"]): s.lam for s in res.stages}})


def cmd_verify_kernel(cfg: Config, out: OutputDir, args):
    out.check(["verify_kernel.json", "manifest.json"])
    rk = _regularized(cfg)
    C = cfg.lip_const
    if C is None:
        C = kernels.calibrate_lip_const(rk, cfg.n_samples, seed=cfg.master_seed + 1, margin=1e-3)
    rep = kernels.verify_local_lipschitz(rk, rk.envelope(C), n_samples=cfg.n_samples, seed=cfg.master_seed)
    report = {**rep.to_dict(), "mvt_constant": kernels.mvt_constant(rk)}
    out.json("verify_kernel.json", report)
    print(json.dumps({k: report[k] for k in ("kind", "eps", "C", "violations", "calibrated_C")}))


COMMANDS = {
    "solve-pde": (cmd_solve_pde, "integrate the regularized PDE; writes snapshots.csv and diagnostics.json"),
    "simulate": (cmd_simulate, "run the N-particle system alone; writes trajectories.csv"),
    "couple": (cmd_couple, "coupled particle/mean-field replicates; writes coupling.csv"),
    "lln": (cmd_lln, "law-of-large-numbers exceedance ladder; writes lln.csv and rates.json"),
    "sweep": (cmd_sweep, "N sweep of coupled replicates; writes sweep_result.csv and rates.json"),
    "verify-kernel": (cmd_verify_kernel, "sample the local Lipschitz envelope; writes verify_kernel.json"),
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="chaoslab", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name, (_, help_) in COMMANDS.items():
        s = sub.add_parser(name, help=help_)
        s.add_argument("--config", help="JSON config file (defaults apply to missing keys)")
        s.add_argument("--seed", type=int, help="master seed (overrides config)")
        s.add_argument("--out", required=True, help="output directory")
        s.add_argument("--force", action="store_true", help="overwrite existing outputs")
        s.add_argument("--threads", type=int, help="worker processes (default: $CHAOSLAB_THREADS or 1)")
        s.add_argument("--set", action="append", metavar="KEY=JSON", help="override one config key")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    started = _dt.datetime.now(_dt.timezone.utc)
    try:
        cfg = parse_config(args.config, _overrides(args))
        out = OutputDir(args.out, args.force)
        fn, _ = COMMANDS[args.command]
        fn(cfg, out, args)
        out.manifest(cfg, args.command, started, {"threads": _threads(args)})
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except IoError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (NumericalFailure, ChaoslabError) as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
