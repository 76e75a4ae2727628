"""Coupled simulation of the regularized particle system and its mean-field companions.

Both systems start from the same i.i.d. draws and consume the same Brownian increments, so
``|X_t - Y_t|_inf`` measures the particle-system error directly.
"""

from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, OutOfDomain
from .kernels import KernelSpec, RegularizedKernel, calibrate_lip_const, interaction_forces
from .pde import Gaussian, Grid1D, InitialDensity, PdeSolution, envelope_bound_series, solve, stable_substeps
from .stochastics import SeedSpec, brownian_increments, sample_initial

log = logging.getLogger(__name__)


def check_exponents(alpha: float, beta: float):
    if not 0 < alpha < 0.5:
        raise ConfigError(f"alpha must lie in (0, 1/2), got {alpha}", "alpha")
    if not 0 < beta <= alpha:
        raise ConfigError(f"beta must satisfy 0 < beta <= alpha, got beta={beta}, alpha={alpha}", "beta")


@dataclass(frozen=True)
class CoupledConfig:
    N: int
    alpha: float = 0.25
    beta: float = 0.25
    sigma: float = 0.5
    T: float = 1.0
    dt: float = 0.01
    kernel: KernelSpec = field(default_factory=KernelSpec.bcm)
    rho0: InitialDensity = field(default_factory=Gaussian)
    grid: Grid1D = field(default_factory=lambda: Grid1D.symmetric(8.0, 1024))
    eps_scale: float = 1.0
    lam: float | None = None
    lip_const: float | None = None
    pde_substeps: int | None = None

    def __post_init__(self):
        check_exponents(self.alpha, self.beta)
        if self.N < 1:
            raise ConfigError(f"N must be >= 1, got {self.N}", "N")
        if not self.dt > 0:
            raise ConfigError(f"dt must be positive, got {self.dt}", "dt")
        if self.T < 0:
            raise ConfigError(f"T must be >= 0, got {self.T}", "T")
        if self.sigma < 0:
            raise ConfigError(f"sigma must be >= 0, got {self.sigma}", "sigma")
        if not self.eps_scale > 0:
            raise ConfigError("eps_scale must be positive", "eps_scale")

    @property
    def eps(self) -> float:
        return self.eps_scale * self.N ** (-self.beta)

    @property
    def delta(self) -> float:
        return 0.5 * (0.5 - self.alpha)


@dataclass
class CoupledEnsemble:
    X: np.ndarray
    Y: np.ndarray
    t: float = 0.0
    eps: float = 0.0
    beta: float = 0.0
    out_of_domain: int = 0

    @classmethod
    def start(cls, X0: np.ndarray, eps: float = 0.0, beta: float = 0.0) -> "CoupledEnsemble":
        X0 = np.asarray(X0, dtype=float)
        return cls(X0.copy(), X0.copy(), 0.0, eps, beta)

    @property
    def N(self) -> int:
        return self.X.size


def em_step_particles(ens: CoupledEnsemble, rk: RegularizedKernel, sigma: float, dt: float, dB) -> np.ndarray:
    """Euler-Maruyama step of the N-particle system."""
    return ens.X + interaction_forces(rk, ens.X) * dt + sigma * dB


def em_step_meanfield(
    ens: CoupledEnsemble, sol: PdeSolution, sigma: float, dt: float, dB, strict: bool = False
) -> np.ndarray:
    """Euler-Maruyama step of the mean-field trajectories with drift read off ``sol``.

    Points leaving the grid are reflected back and counted in ``ens.out_of_domain``;
    with ``strict`` they raise :class:`OutOfDomain` instead.
    """
    Y = ens.Y + sol.drift_at(ens.t, ens.Y) * dt + sigma * dB
    lo, hi = sol.grid.x_min, sol.grid.x_max
    out = (Y < lo) | (Y > hi)
    if out.any():
        if strict:
            raise OutOfDomain(f"{int(out.sum())} mean-field particles left [{lo}, {hi}] at t={ens.t:g}")
        ens.out_of_domain += int(out.sum())
        Y = np.where(Y < lo, 2 * lo - Y, Y)
        Y = np.where(Y > hi, 2 * hi - Y, Y)
    return Y


@dataclass
class TrajectoryRecord:
    replicate_id: int
    times: np.ndarray
    sup_dev: np.ndarray
    J: np.ndarray
    threshold: float
    X_T: np.ndarray = field(repr=False)
    Y_T: np.ndarray = field(repr=False)
    out_of_domain: int = 0

    @property
    def exceeded(self) -> bool:
        return bool(self.sup_dev.max() >= self.threshold)

    @property
    def max_sup_dev(self) -> float:
        return float(self.sup_dev.max())


@dataclass
class MeanFieldSetup:
    """Everything shared by the replicates of one (config, N): the PDE law and constants."""

    cfg: CoupledConfig
    rk: RegularizedKernel
    sol: PdeSolution
    dt: float
    n_steps: int
    lam: float
    envelope_sup: float


def prepare(cfg: CoupledConfig, sol: PdeSolution | None = None) -> MeanFieldSetup:
    """Solve the PDE at ``eps = c N^-beta`` and fix the envelope constant and ``lambda``."""
    rk = RegularizedKernel(cfg.kernel, cfg.eps)
    if cfg.kernel.is_zero:
        C = 0.0
    elif cfg.lip_const is not None:
        C = cfg.lip_const
    else:
        C = calibrate_lip_const(rk)
    rk = rk.with_lip_const(C)
    n_steps = int(math.ceil(cfg.T / cfg.dt - 1e-9)) if cfg.T > 0 else 0
    dt = cfg.T / n_steps if n_steps else cfg.dt
    if sol is None:
        sub = cfg.pde_substeps or stable_substeps(rk, cfg.grid, dt)
        if n_steps:
            sol = solve(cfg.rho0, rk, cfg.sigma, cfg.T, cfg.grid, dt / sub, save_every=sub)
        else:
            sol = solve(cfg.rho0, rk, cfg.sigma, 0.0, cfg.grid, dt)
    if len(sol) != n_steps + 1:
        raise ConfigError(f"PDE solution has {len(sol)} snapshots, need {n_steps + 1}", "dt")
    env_sup = float(envelope_bound_series(sol, rk.envelope()).max())
    lam = env_sup if cfg.lam is None else float(cfg.lam)
    return MeanFieldSetup(cfg, rk, sol, dt, n_steps, lam, env_sup)


def j_process(times, sup_dev, N: int, alpha: float, delta: float, lam: float, T: float) -> np.ndarray:
    """``J_t = min(1, sup_{s<=t} exp(lam (T-s)) (N^alpha |X_s - Y_s|_inf + N^-delta))``."""
    g = np.exp(lam * (T - np.asarray(times))) * (N**alpha * np.asarray(sup_dev) + N ** (-delta))
    return np.minimum(1.0, np.maximum.accumulate(g))


def run_from(setup: MeanFieldSetup, X0: np.ndarray, dB: np.ndarray, replicate_id: int = 0) -> TrajectoryRecord:
    """Run both systems from explicit initial data and ``(N, n_steps)`` increments."""
    cfg, rk, sol, dt = setup.cfg, setup.rk, setup.sol, setup.dt
    ens = CoupledEnsemble.start(X0, rk.eps, cfg.beta)
    times = dt * np.arange(setup.n_steps + 1)
    sup_dev = np.zeros(setup.n_steps + 1)
    for n in range(setup.n_steps):
        ens.t = times[n]
        X = em_step_particles(ens, rk, cfg.sigma, dt, dB[:, n])
        Y = em_step_meanfield(ens, sol, cfg.sigma, dt, dB[:, n])
        ens.X, ens.Y = X, Y
        sup_dev[n + 1] = np.max(np.abs(X - Y))
    J = j_process(times, sup_dev, ens.N, cfg.alpha, cfg.delta, setup.lam, cfg.T)
    return TrajectoryRecord(
        replicate_id, times, sup_dev, J, ens.N ** (-cfg.alpha), ens.X, ens.Y, ens.out_of_domain
    )


def run_replicate(setup: MeanFieldSetup, seed: SeedSpec) -> TrajectoryRecord:
    N = setup.cfg.N
    X0 = sample_initial(setup.cfg.rho0, N, seed)
    dB = brownian_increments(seed, N, setup.n_steps, setup.dt) if setup.n_steps else np.empty((N, 0))
    return run_from(setup, X0, dB, seed.replicate_id)


def run_coupled(cfg: CoupledConfig, seed: SeedSpec, setup: MeanFieldSetup | None = None) -> TrajectoryRecord:
    setup = prepare(cfg) if setup is None else setup
    return run_replicate(setup, seed)


def simulate_particles(rk, X0, sigma: float, dt: float, dB: np.ndarray, forces=None) -> np.ndarray:
    """Particle system alone; returns positions ``(n_steps + 1, N)``.

    ``forces`` replaces the regularized force assembly (used for the unregularized diagnostic mode).
    """
    forces = (lambda x: interaction_forces(rk, x)) if forces is None else forces
    X = np.asarray(X0, dtype=float).copy()
    path = [X.copy()]
    for n in range(dB.shape[1]):
        X = X + forces(X) * dt + sigma * dB[:, n]
        path.append(X.copy())
    return np.stack(path)


def with_kernel(cfg: CoupledConfig, kernel: KernelSpec) -> CoupledConfig:
    return dataclasses.replace(cfg, kernel=kernel)
