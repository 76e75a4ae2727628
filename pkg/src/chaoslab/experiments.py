"""Sweeps over the particle count: one PDE solve per N, many coupled replicates, rate fits."""

from __future__ import annotations

import dataclasses
import json
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .analysis import chaos_sets, fit_rate, wasserstein1_vs_density
from .coupling import CoupledConfig, MeanFieldSetup, TrajectoryRecord, check_exponents, prepare, run_replicate
from .errors import ConfigError, DegenerateFit
from .kernels import KernelSpec
from .pde import Gaussian, Grid1D, InitialDensity
from .stochastics import SeedSpec

log = logging.getLogger(__name__)

ROW_FIELDS = (
    "N",
    "eps",
    "exceedance_fraction",
    "median_sup_dev",
    "mean_J_T",
    "W1_final",
    "B1_fail_fraction",
    "B2_fail_fraction",
    "out_of_domain",
)


@dataclass(frozen=True)
class SweepConfig:
    N_list: tuple[int, ...] = (64, 128, 256, 512)
    alpha: float = 0.25
    beta: float = 0.25
    eps_scale: float = 1.0
    sigma: float = 0.5
    T: float = 1.0
    dt: float = 0.01
    reps: int = 200
    kernel: KernelSpec = field(default_factory=KernelSpec.bcm)
    rho0: InitialDensity = field(default_factory=Gaussian)
    grid: Grid1D = field(default_factory=lambda: Grid1D.symmetric(8.0, 1024))
    master_seed: int = 0
    lam: float | None = None
    lip_const: float | None = None

    def __post_init__(self):
        check_exponents(self.alpha, self.beta)
        object.__setattr__(self, "N_list", tuple(int(n) for n in self.N_list))
        if any(n < 2 for n in self.N_list):
            raise ConfigError("every N must be >= 2", "N_list")
        if any(b <= a for a, b in zip(self.N_list[:-1], self.N_list[1:])):
            raise ConfigError(f"N_list must be strictly increasing, got {list(self.N_list)}", "N_list")
        if self.reps < 30:
            raise ConfigError(f"reps must be >= 30, got {self.reps}", "reps")

    def coupled(self, N: int) -> CoupledConfig:
        return CoupledConfig(
            N=N,
            alpha=self.alpha,
            beta=self.beta,
            sigma=self.sigma,
            T=self.T,
            dt=self.dt,
            kernel=self.kernel,
            rho0=self.rho0,
            grid=self.grid,
            eps_scale=self.eps_scale,
            lam=self.lam,
            lip_const=self.lip_const,
        )


@dataclass
class NSummary:
    """Aggregates of one N stage; ``row`` holds the CSV columns."""

    row: dict
    max_sup_dev: list[float]
    J_T: list[float]
    wall_time: float
    lam: float

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class SweepResult:
    config: SweepConfig
    stages: list[NSummary]
    rates: dict

    @property
    def rows(self) -> list[dict]:
        return [s.row for s in self.stages]

    def column(self, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.rows], dtype=float)

    @property
    def timings(self) -> dict:
        return {str(s.row["N"]): s.wall_time for s in self.stages}


# ---------------------------------------------------------------------------
# replicate workers

_SETUP: MeanFieldSetup | None = None


def _init_worker(setup: MeanFieldSetup):
    global _SETUP
    _SETUP = setup


def _worker(args):
    master, r = args
    return _replicate_summary(_SETUP, SeedSpec(master, r))


def _replicate_summary(setup: MeanFieldSetup, seed: SeedSpec):
    rec = run_replicate(setup, seed)
    cfg = setup.cfg
    cs = chaos_sets(rec.Y_T, setup.rk, setup.rk.envelope(), setup.sol, cfg.T, cfg.alpha, cfg.delta)
    return rec, cs.in_B1, cs.in_B2


def run_replicates(setup: MeanFieldSetup, master_seed: int, reps: int, threads: int = 1):
    """``reps`` replicates with seeds ``(master_seed, r)``; results are ordered by ``r``."""
    jobs = [(master_seed, r) for r in range(reps)]
    if threads <= 1:
        return [_replicate_summary(setup, SeedSpec(m, r)) for m, r in jobs]
    with ProcessPoolExecutor(max_workers=threads, initializer=_init_worker, initargs=(setup,)) as pool:
        return list(pool.map(_worker, jobs, chunksize=max(1, reps // (4 * threads))))


def summarize(setup: MeanFieldSetup, results, wall_time: float = 0.0) -> NSummary:
    recs: list[TrajectoryRecord] = [r for r, _, _ in results]
    N = setup.cfg.N
    sup = np.array([r.max_sup_dev for r in recs])
    JT = np.array([r.J[-1] for r in recs])
    pooled = np.concatenate([r.X_T for r in recs])
    row = {
        "N": N,
        "eps": setup.rk.eps,
        "exceedance_fraction": float(np.mean([r.exceeded for r in recs])),
        "median_sup_dev": float(np.median(sup)),
        "mean_J_T": float(JT.mean()),
        "W1_final": wasserstein1_vs_density(pooled, setup.sol.snapshot(len(setup.sol) - 1)),
        "B1_fail_fraction": float(np.mean([not b1 for _, b1, _ in results])),
        "B2_fail_fraction": float(np.mean([not b2 for _, _, b2 in results])),
        "out_of_domain": int(sum(r.out_of_domain for r in recs)),
    }
    return NSummary(row, sup.tolist(), JT.tolist(), wall_time, setup.lam)


def fit_rates(rows: list[dict]) -> dict:
    out = {}
    for name, censor in (("exceedance_fraction", True), ("median_sup_dev", False), ("W1_final", False)):
        pts = [(r["N"], r[name]) for r in rows]
        try:
            out[name] = fit_rate(pts, censor_zeros=censor).to_dict()
        except DegenerateFit as exc:
            out[name] = {"error": str(exc), "censored_N": [float(n) for n, s in pts if s == 0]}
    out["monotone"] = {
        name: bool(all(b[name] <= a[name] for a, b in zip(rows[:-1], rows[1:])))
        for name in ("exceedance_fraction", "median_sup_dev", "W1_final")
    }
    return out


def _partial_path(partial_dir: Path, N: int) -> Path:
    return partial_dir / f"N{N}.json"


def run_sweep(
    cfg: SweepConfig,
    threads: int = 1,
    partial_dir: str | os.PathLike | None = None,
    fingerprint: str = "",
) -> SweepResult:
    """Run every N stage in order.

    With ``partial_dir`` each finished stage is written to ``N<N>.json`` tagged with
    ``fingerprint``; a later call with the same fingerprint reloads it instead of recomputing.
    """
    pdir = Path(partial_dir) if partial_dir is not None else None
    if pdir is not None:
        pdir.mkdir(parents=True, exist_ok=True)
    stages = []
    for N in cfg.N_list:
        if pdir is not None:
            p = _partial_path(pdir, N)
            if p.exists():
                saved = json.loads(p.read_text())
                if saved.get("fingerprint") == fingerprint:
                    log.info("N=%d: reusing %s", N, p)
                    stages.append(NSummary(**saved["stage"]))
                    continue
        t0 = time.perf_counter()
        setup = prepare(cfg.coupled(N))
        results = run_replicates(setup, cfg.master_seed, cfg.reps, threads)
        stage = summarize(setup, results, time.perf_counter() - t0)
        log.info("N=%d: %s (%.1fs)", N, stage.row, stage.wall_time)
        stages.append(stage)
        if pdir is not None:
            tmp = _partial_path(pdir, N).with_suffix(".tmp")
            tmp.write_text(json.dumps({"fingerprint": fingerprint, "stage": stage.to_dict()}))
            tmp.replace(_partial_path(pdir, N))
    return SweepResult(cfg, stages, fit_rates([s.row for s in stages]) if stages else {})


def sampling_noise_baseline(cfg: SweepConfig, N: int, threads: int = 1) -> float:
    """W1 between the pooled final X-marginal and the PDE law for ``k = 0`` at the same ``N`` and ``reps``.

    With no interaction the particles are exactly i.i.d. from the heat flow, so this isolates sampling noise.
    """
    zero = dataclasses.replace(cfg, kernel=KernelSpec.zero(cfg.kernel.R), N_list=(N,))
    setup = prepare(zero.coupled(N))
    return summarize(setup, run_replicates(setup, cfg.master_seed, cfg.reps, threads)).row["W1_final"]

