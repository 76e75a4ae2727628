"""Finite-volume solver for the 1D diffusion-aggregation equation

    d/dt rho = (sigma^2 / 2) rho_xx + ((k^eps * rho) rho)_x

on a truncated domain with zero-flux walls. Each step is IMEX: explicit conservative upwind
transport with velocity ``b = -(k^eps * rho)``, then backward-Euler diffusion via one
tridiagonal solve.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import lapack
from scipy.signal import fftconvolve
from scipy.special import ndtr, ndtri

from .errors import CflViolation, ConfigError, DomainTooSmall, GridMismatch, NumericalError
from .kernels import RegularizedKernel

TOL_BOUNDARY = 1e-6
DEFAULT_P = (2, 4, 8)
FFT_THRESHOLD = 2048


# ---------------------------------------------------------------------------
# initial densities


class InitialDensity:
    """A probability density on the line with closed-form cdf and cell averages."""

    def pdf(self, x):
        raise NotImplementedError

    def cdf(self, x):
        raise NotImplementedError

    def ppf(self, u):
        raise NotImplementedError

    def support(self) -> tuple[float, float]:
        """Interval carrying all but a negligible amount of mass."""
        raise NotImplementedError

    def breakpoints(self) -> tuple[float, ...]:
        return ()

    def cell_averages(self, edges: np.ndarray) -> np.ndarray:
        edges = np.asarray(edges, dtype=float)
        return np.diff(self.cdf(edges)) / np.diff(edges)


@dataclass(frozen=True)
class Gaussian(InitialDensity):
    mean: float = 0.0
    sd: float = 1.0

    def __post_init__(self):
        if not self.sd > 0:
            raise ConfigError(f"sd must be positive, got {self.sd}", "rho0.sd")

    def pdf(self, x):
        z = (np.asarray(x, dtype=float) - self.mean) / self.sd
        return np.exp(-0.5 * z * z) / (self.sd * math.sqrt(2 * math.pi))

    def cdf(self, x):
        return ndtr((np.asarray(x, dtype=float) - self.mean) / self.sd)

    def ppf(self, u):
        return self.mean + self.sd * ndtri(u)

    def support(self):
        return (self.mean - 12 * self.sd, self.mean + 12 * self.sd)


@dataclass(frozen=True)
class UniformBox(InitialDensity):
    a: float = -0.5
    b: float = 0.5

    def __post_init__(self):
        if not self.b > self.a:
            raise ConfigError(f"box needs a < b, got [{self.a}, {self.b}]", "rho0")

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        return np.where((x >= self.a) & (x <= self.b), 1.0 / (self.b - self.a), 0.0)

    def cdf(self, x):
        return np.clip((np.asarray(x, dtype=float) - self.a) / (self.b - self.a), 0.0, 1.0)

    def ppf(self, u):
        return self.a + (self.b - self.a) * np.asarray(u, dtype=float)

    def support(self):
        return (self.a, self.b)

    def breakpoints(self):
        return (self.a, self.b)


@dataclass(frozen=True)
class Mixture(InitialDensity):
    weights: tuple[float, ...]
    components: tuple[InitialDensity, ...]

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if len(self.weights) != len(self.components) or len(w) == 0:
            raise ConfigError("mixture needs one weight per component", "rho0.components")
        if np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ConfigError(f"mixture weights must be positive and sum to 1, got sum {w.sum()}", "rho0.weights")

    def pdf(self, x):
        return sum(w * c.pdf(x) for w, c in zip(self.weights, self.components))

    def cdf(self, x):
        return sum(w * c.cdf(x) for w, c in zip(self.weights, self.components))

    def ppf(self, u, tol: float = 1e-12):
        u = np.asarray(u, dtype=float)
        lo_s, hi_s = self.support()
        lo = np.full_like(u, lo_s)
        hi = np.full_like(u, hi_s)
        # vectorized bisection on the monotone cdf
        while np.max(hi - lo) > tol:
            mid = 0.5 * (lo + hi)
            if np.all((mid <= lo) | (mid >= hi)):
                break  # interval no longer splits in floating point
            below = self.cdf(mid) < u
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
        return 0.5 * (lo + hi)

    def support(self):
        s = [c.support() for c in self.components]
        return (min(a for a, _ in s), max(b for _, b in s))

    def breakpoints(self):
        return tuple(sorted({p for c in self.components for p in c.breakpoints()}))


# ---------------------------------------------------------------------------
# grid and densities


@dataclass(frozen=True)
class Grid1D:
    x_min: float
    x_max: float
    M: int

    def __post_init__(self):
        if self.M < 16:
            raise ConfigError(f"M must be >= 16, got {self.M}", "grid.M")
        if not self.x_max > self.x_min:
            raise ConfigError("grid needs x_min < x_max", "grid.L")

    @classmethod
    def symmetric(cls, L: float, M: int) -> "Grid1D":
        if not L > 0:
            raise ConfigError(f"L must be positive, got {L}", "grid.L")
        return cls(-float(L), float(L), int(M))

    @property
    def dx(self) -> float:
        return (self.x_max - self.x_min) / self.M

    @property
    def edges(self) -> np.ndarray:
        return self.x_min + self.dx * np.arange(self.M + 1)

    @property
    def centers(self) -> np.ndarray:
        return self.x_min + self.dx * (np.arange(self.M) + 0.5)


@dataclass
class GridDensity:
    grid: Grid1D
    values: np.ndarray
    t: float = 0.0

    @classmethod
    def project(cls, rho0: InitialDensity, grid: Grid1D, t: float = 0.0) -> "GridDensity":
        """Exact cell averages of ``rho0``, renormalized to unit mass on the grid."""
        vals = rho0.cell_averages(grid.edges)
        mass = vals.sum() * grid.dx
        if abs(1.0 - mass) > TOL_BOUNDARY:
            raise DomainTooSmall(f"initial density loses {1.0 - mass:.3e} mass outside the grid")
        return cls(grid, vals / mass, t)

    @property
    def mass(self) -> float:
        return float(self.values.sum() * self.grid.dx)

    def cumulative(self):
        """(edges, cumulative mass at edges): the exact piecewise-linear cdf."""
        cm = np.concatenate(([0.0], np.cumsum(self.values) * self.grid.dx))
        return self.grid.edges, cm

    def cdf(self, x):
        e, cm = self.cumulative()
        return np.interp(x, e, cm)

    def ppf(self, u):
        e, cm = self.cumulative()
        u = np.asarray(u, dtype=float) * cm[-1]
        j = np.clip(np.searchsorted(cm, u, side="right") - 1, 0, self.grid.M - 1)
        vals = self.values[j]
        frac = np.where(vals > 0, (u - cm[j]) / np.where(vals > 0, vals, 1.0), 0.0)
        return e[j] + frac


# ---------------------------------------------------------------------------
# convolution and drift


class ConvolutionOperator:
    """Midpoint quadrature ``(k^eps * rho)(x_j) = dx sum_m k^eps(x_j - x_m) rho_m``.

    The kernel is sampled once on all grid offsets; ``method`` is ``direct`` (O(M^2)),
    ``fft`` or ``auto`` (fft for M >= 2048).
    """

    def __init__(self, rk: RegularizedKernel, grid: Grid1D, method: str = "auto"):
        if method not in ("auto", "direct", "fft"):
            raise ConfigError(f"unknown convolution method {method!r}")
        self.rk = rk
        self.grid = grid
        self.method = ("fft" if grid.M >= FFT_THRESHOLD else "direct") if method == "auto" else method
        offsets = grid.dx * np.arange(-(grid.M - 1), grid.M)
        self.kvals = np.asarray(rk(offsets), dtype=float)
        self.is_zero = rk.base.is_zero

    def __call__(self, values: np.ndarray) -> np.ndarray:
        if self.is_zero:
            return np.zeros_like(values)
        if self.method == "fft":
            out = fftconvolve(self.kvals, values, mode="valid")
        else:
            out = np.convolve(self.kvals, values, mode="valid")
        return self.grid.dx * out


def drift_field(rk: RegularizedKernel, rho: GridDensity, conv: ConvolutionOperator | None = None) -> np.ndarray:
    """``b_j = -(k^eps * rho)(x_j)`` on cell centres."""
    conv = ConvolutionOperator(rk, rho.grid) if conv is None else conv
    return -conv(rho.values)


def step_convolution(pieces, rho: GridDensity, x) -> np.ndarray:
    """Exact ``(l * rho)(x)`` for ``l = sum c 1_[a,b]`` and piecewise-constant ``rho``."""
    e, cm = rho.cumulative()
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    for a, b, c in pieces:
        out += c * (np.interp(x - a, e, cm) - np.interp(x - b, e, cm))
    return out


# ---------------------------------------------------------------------------
# time stepping


class TridiagonalSolver:
    """Factor-once solver for ``(I - r L) u = f`` with the zero-flux Laplacian ``L``."""

    def __init__(self, M: int, r: float):
        self.M = M
        self.r = r
        d = np.full(M, 1.0 + 2.0 * r)
        d[0] = d[-1] = 1.0 + r
        off = np.full(M - 1, -r)
        self.lower, self.diag, self.upper = off.copy(), d, off.copy()
        dl, dd, du, du2, ipiv, info = lapack.dgttrf(self.lower, self.diag, self.upper)
        if info != 0:
            raise NumericalError(f"tridiagonal factorization failed (info={info})")
        self._lu = (dl, dd, du, du2, ipiv)

    def solve(self, f: np.ndarray) -> np.ndarray:
        x, info = lapack.dgttrs(*self._lu, f)
        if info != 0 or not np.all(np.isfinite(x)):
            raise NumericalError(f"tridiagonal solve failed (info={info})")
        return x

    def dense(self) -> np.ndarray:
        return np.diag(self.diag) + np.diag(self.upper, 1) + np.diag(self.lower, -1)


def upwind_update(values: np.ndarray, b: np.ndarray, dt: float, dx: float) -> np.ndarray:
    """One explicit conservative upwind step of ``rho_t + (b rho)_x = 0`` with no-flux walls."""
    bf = 0.5 * (b[:-1] + b[1:])
    flux = np.maximum(bf, 0.0) * values[:-1] + np.minimum(bf, 0.0) * values[1:]
    F = np.concatenate(([0.0], flux, [0.0]))
    return values - dt / dx * (F[1:] - F[:-1])


class Stepper:
    """Reusable IMEX stepper for fixed ``(rk, sigma, grid, dt)``."""

    def __init__(self, rk: RegularizedKernel, sigma: float, grid: Grid1D, dt: float, conv=None):
        if dt < 0:
            raise ConfigError(f"dt must be >= 0, got {dt}", "dt")
        if sigma < 0:
            raise ConfigError(f"sigma must be >= 0, got {sigma}", "sigma")
        self.rk, self.sigma, self.grid, self.dt = rk, sigma, grid, dt
        self.conv = ConvolutionOperator(rk, grid) if conv is None else conv
        r = 0.5 * sigma * sigma * dt / grid.dx**2
        self.diffuse = TridiagonalSolver(grid.M, r) if r > 0 else None

    def __call__(self, state: GridDensity) -> GridDensity:
        if self.dt == 0:
            return GridDensity(state.grid, state.values.copy(), state.t)
        dx = self.grid.dx
        b = -self.conv(state.values)
        bmax = float(np.max(np.abs(b))) if b.size else 0.0
        if self.dt * bmax > 0.5 * dx:
            raise CflViolation(f"dt={self.dt:g} exceeds 0.5*dx/max|b| = {0.5 * dx / bmax:g}")
        vals = upwind_update(state.values, b, self.dt, dx) if bmax > 0 else state.values
        if self.diffuse is not None:
            vals = self.diffuse.solve(vals)
        else:
            vals = vals.copy()
        return GridDensity(state.grid, vals, state.t + self.dt)


def step(state: GridDensity, rk: RegularizedKernel, sigma: float, dt: float) -> GridDensity:
    return Stepper(rk, sigma, state.grid, dt)(state)


# ---------------------------------------------------------------------------
# full solves


@dataclass
class PdeSolution:
    times: np.ndarray
    densities: np.ndarray  # (n_snapshots, M)
    grid: Grid1D
    sigma: float
    rk: RegularizedKernel
    dt: float
    conv: ConvolutionOperator = field(repr=False)
    _drifts: dict = field(default_factory=dict, repr=False)

    def __len__(self):
        return len(self.times)

    def snapshot(self, n: int) -> GridDensity:
        return GridDensity(self.grid, self.densities[n], float(self.times[n]))

    @property
    def snapshots(self) -> list[GridDensity]:
        return [self.snapshot(n) for n in range(len(self))]

    def drift(self, n: int) -> np.ndarray:
        if n not in self._drifts:
            self._drifts[n] = -self.conv(self.densities[n])
        return self._drifts[n]

    def drift_table(self) -> np.ndarray:
        return np.stack([self.drift(n) for n in range(len(self))])

    def _bracket(self, t: float):
        T = float(self.times[-1])
        tol = 1e-9 * max(1.0, T)
        if t < -tol or t > T + tol:
            raise GridMismatch(f"time {t} outside solution range [0, {T}]")
        n = int(np.searchsorted(self.times, t, side="right") - 1)
        n = min(max(n, 0), len(self) - 1)
        if abs(self.times[n] - t) <= tol or n == len(self) - 1:
            return n, n, 0.0
        if n + 1 < len(self) and abs(self.times[n + 1] - t) <= tol:
            return n + 1, n + 1, 0.0
        w = (t - self.times[n]) / (self.times[n + 1] - self.times[n])
        return n, n + 1, float(w)

    def drift_at(self, t: float, x) -> np.ndarray:
        """Drift ``-(k^eps * rho_t)(x)``, piecewise linear in x and in t between snapshots."""
        n0, n1, w = self._bracket(t)
        xc = self.grid.centers
        b = np.interp(x, xc, self.drift(n0))
        if w == 0.0:
            return b
        return (1.0 - w) * b + w * np.interp(x, xc, self.drift(n1))

    def density_at(self, t: float) -> GridDensity:
        n0, n1, w = self._bracket(t)
        vals = self.densities[n0] if w == 0.0 else (1 - w) * self.densities[n0] + w * self.densities[n1]
        return GridDensity(self.grid, vals, t)


def stable_substeps(rk: RegularizedKernel, grid: Grid1D, dt: float, courant: float = 0.4) -> int:
    """Smallest substep count keeping ``dt_sub * sup|k^eps| <= courant * dx``."""
    bound = rk.norm_bound
    if bound == 0 or rk.base.is_zero:
        return 1
    return max(1, math.ceil(dt * bound / (courant * grid.dx) - 1e-12))


def solve(
    rho0: InitialDensity,
    rk: RegularizedKernel,
    sigma: float,
    T: float,
    grid: Grid1D,
    dt: float,
    save_every: int = 1,
    tol_boundary: float = TOL_BOUNDARY,
    conv_method: str = "auto",
) -> PdeSolution:
    """Integrate to ``T``, saving every ``save_every`` steps and always at ``T``."""
    if T < 0:
        raise ConfigError(f"T must be >= 0, got {T}", "T")
    if not dt > 0:
        raise ConfigError(f"dt must be positive, got {dt}", "dt")
    if save_every < 1:
        raise ConfigError("save_every must be >= 1", "save_every")
    n_steps = int(math.ceil(T / dt - 1e-9)) if T > 0 else 0
    if n_steps:
        dt = T / n_steps
    state = GridDensity.project(rho0, grid)
    conv = ConvolutionOperator(rk, grid, conv_method)
    stepper = Stepper(rk, sigma, grid, dt, conv)
    times, snaps = [0.0], [state.values]
    _check_boundary(state, tol_boundary)
    for n in range(1, n_steps + 1):
        state = stepper(state)
        if n % save_every == 0 or n == n_steps:
            state.t = n * dt
            _check_boundary(state, tol_boundary)
            times.append(n * dt)
            snaps.append(state.values)
    return PdeSolution(np.array(times), np.stack(snaps), grid, sigma, rk, dt, conv)


def _check_boundary(state: GridDensity, tol: float):
    edge = max(state.values[0], state.values[-1])
    if edge > tol:
        raise DomainTooSmall(f"boundary density {edge:.3e} exceeds {tol:g} at t={state.t:g}; enlarge the grid")


def diagnostics(sol: PdeSolution, ps: Sequence[int] = DEFAULT_P) -> list[dict]:
    """Per-snapshot mass, first absolute moment, L^p norms and sup norm."""
    x = sol.grid.centers
    dx = sol.grid.dx
    out = []
    for t, rho in zip(sol.times, sol.densities):
        row = {
            "t": float(t),
            "mass": float(dx * rho.sum()),
            "abs_moment": float(dx * np.sum(np.abs(x) * rho)),
            "linf": float(rho.max()),
            "min": float(rho.min()),
        }
        for p in ps:
            row[f"l{p}"] = float((dx * np.sum(np.abs(rho) ** p)) ** (1.0 / p))
        out.append(row)
    return out


def same_discretization(a: PdeSolution, b: PdeSolution) -> bool:
    return a.grid == b.grid and a.times.shape == b.times.shape and np.allclose(a.times, b.times, rtol=0, atol=1e-12)


def weak_convergence_gap(sol_eps: PdeSolution, sol_ref: PdeSolution, phi: Callable) -> float:
    """``sup_t |int (rho^eps_t - rho^ref_t) phi dx|`` over common snapshots."""
    if not same_discretization(sol_eps, sol_ref):
        raise GridMismatch("solutions differ in grid or snapshot times")
    w = phi(sol_eps.grid.centers) * sol_eps.grid.dx
    return float(np.max(np.abs((sol_eps.densities - sol_ref.densities) @ w)))


def envelope_bound_series(sol: PdeSolution, env) -> np.ndarray:
    """``||l^eps * rho_t||_inf`` at every snapshot.

    ``l * rho`` is piecewise linear with kinks at ``edge + a`` and ``edge + b``, so evaluating
    there gives the exact maximum.
    """
    pieces = env.pieces()
    if not pieces:
        return np.zeros(len(sol))
    e = sol.grid.edges
    pts = np.unique(np.concatenate([e + a for a, _, _ in pieces] + [e + b for _, b, _ in pieces]))
    return np.array([np.max(step_convolution(pieces, sol.snapshot(n), pts)) for n in range(len(sol))])
